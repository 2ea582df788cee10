#include "mergepipe/checkpoint.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <set>

#include "mergepipe/canonical.hpp"
#include "mergepipe/errors.hpp"
#include "mergepipe/sha256.hpp"

namespace mergepipe {

namespace {

[[noreturn]] void throw_errno(const std::string& what, const std::filesystem::path& p) {
  throw IoError(what + " " + p.string() + ": " + std::strerror(errno));
}

void write_full(int fd, const void* data, size_t len, const std::filesystem::path& p) {
  const uint8_t* ptr = static_cast<const uint8_t*>(data);
  while (len > 0) {
    ssize_t n = ::write(fd, ptr, len);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw_errno("write", p);
    }
    ptr += n;
    len -= size_t(n);
  }
}

uint64_t checked_element_count(const std::vector<uint64_t>& shape,
                               const std::string& name) {
  if (shape.empty()) {
    throw InvalidArgument("tensor " + name + ": empty shape");
  }
  uint64_t count = 1;
  for (uint64_t dim : shape) {
    if (dim == 0) {
      throw InvalidArgument("tensor " + name + ": zero-sized dimension");
    }
    if (count > UINT64_MAX / dim) {
      throw InvalidArgument("tensor " + name + ": shape overflow");
    }
    count *= dim;
  }
  return count;
}

}  // namespace

uint64_t TensorMeta::element_count() const {
  return checked_element_count(shape, name);
}

nlohmann::json TensorMeta::to_json() const {
  return nlohmann::json{{"name", name},
                        {"dtype", to_string(dtype)},
                        {"shape", shape},
                        {"offset_bytes", offset_bytes},
                        {"length_bytes", length_bytes}};
}

TensorMeta TensorMeta::from_json(const nlohmann::json& j) {
  TensorMeta t;
  t.name = j.at("name").get<std::string>();
  t.dtype = dtype_from_string(j.at("dtype").get<std::string>());
  t.shape = j.at("shape").get<std::vector<uint64_t>>();
  t.offset_bytes = j.at("offset_bytes").get<uint64_t>();
  t.length_bytes = j.at("length_bytes").get<uint64_t>();
  return t;
}

uint64_t CheckpointHeader::payload_bytes() const {
  uint64_t total = 0;
  for (const auto& t : tensors) total += t.length_bytes;
  return total;
}

const TensorMeta* CheckpointHeader::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

std::string CheckpointHeader::canonical_bytes() const {
  nlohmann::json tens = nlohmann::json::array();
  for (const auto& t : tensors) tens.push_back(t.to_json());
  return canonical_json({{"model_id", model_id}, {"tensors", tens}});
}

CheckpointHeader CheckpointHeader::from_bytes(std::span<const uint8_t> bytes) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw CorruptData(std::string("checkpoint header: bad JSON: ") + e.what());
  }
  CheckpointHeader h;
  try {
    h.model_id = j.at("model_id").get<std::string>();
    for (const auto& tj : j.at("tensors")) {
      h.tensors.push_back(TensorMeta::from_json(tj));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CorruptData(std::string("checkpoint header: missing field: ") + e.what());
  }
  // structural validation: unique names, consistent lengths, contiguous
  // offsets from 0 in header order
  std::set<std::string> names;
  uint64_t expect_offset = 0;
  for (const auto& t : h.tensors) {
    if (!names.insert(t.name).second) {
      throw CorruptData("checkpoint header: duplicate tensor " + t.name);
    }
    uint64_t count = checked_element_count(t.shape, t.name);
    if (t.length_bytes != count * dtype_size(t.dtype)) {
      throw CorruptData("checkpoint header: length mismatch for " + t.name);
    }
    if (t.offset_bytes != expect_offset) {
      throw CorruptData("checkpoint header: non-contiguous offset for " + t.name);
    }
    expect_offset += t.length_bytes;
  }
  return h;
}

uint64_t block_count(uint64_t element_count, uint64_t block_size_elements) {
  if (block_size_elements == 0) {
    throw InvalidArgument("block size must be positive");
  }
  return (element_count + block_size_elements - 1) / block_size_elements;
}

BlockSpan block_span(uint64_t element_count, uint64_t block_size_elements,
                     uint64_t block_idx) {
  uint64_t nblocks = block_count(element_count, block_size_elements);
  if (block_idx >= nblocks) {
    throw InvalidArgument("block index out of range");
  }
  uint64_t start = block_idx * block_size_elements;
  uint64_t count = std::min(block_size_elements, element_count - start);
  return {start, count};
}

void require_same_structure(const CheckpointHeader& a, const CheckpointHeader& b) {
  for (const auto& ta : a.tensors) {
    const TensorMeta* tb = b.find(ta.name);
    if (!tb) {
      throw MissingTensor("tensor " + ta.name + " missing from " + b.model_id);
    }
    if (tb->shape != ta.shape) {
      throw ShapeMismatch("tensor " + ta.name + ": shape differs");
    }
    if (tb->dtype != ta.dtype) {
      throw ShapeMismatch("tensor " + ta.name + ": dtype differs");
    }
  }
  if (b.tensors.size() != a.tensors.size()) {
    throw MissingTensor("checkpoint " + b.model_id + " has extra tensors");
  }
}

// ----------------------------------------------------------------------------

std::string write_checkpoint(const std::filesystem::path& path,
                             const std::string& model_id,
                             const std::vector<TensorInit>& tensors) {
  CheckpointHeader header;
  header.model_id = model_id;
  uint64_t offset = 0;
  for (const auto& src : tensors) {
    TensorMeta t;
    t.name = src.name;
    t.dtype = src.dtype;
    t.shape = src.shape;
    uint64_t count = checked_element_count(src.shape, src.name);
    if (count != src.values.size()) {
      throw InvalidArgument("tensor " + src.name + ": shape/data mismatch");
    }
    t.offset_bytes = offset;
    t.length_bytes = count * dtype_size(src.dtype);
    offset += t.length_bytes;
    header.tensors.push_back(std::move(t));
  }
  // reuse the read-side validation (duplicate names etc.)
  std::string hbytes = header.canonical_bytes();
  CheckpointHeader::from_bytes(
      std::span<const uint8_t>(reinterpret_cast<const uint8_t*>(hbytes.data()),
                               hbytes.size()));

  int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) throw_errno("open for write", path);

  Sha256 hasher;
  auto emit = [&](const void* data, size_t len) {
    write_full(fd, data, len, path);
    hasher.update(data, len);
  };

  uint8_t prefix[16];
  std::memcpy(prefix, kMagic, 8);
  uint64_t hlen = hbytes.size();
  for (int i = 0; i < 8; i++) prefix[8 + i] = uint8_t(hlen >> (8 * i));
  emit(prefix, sizeof prefix);
  emit(hbytes.data(), hbytes.size());

  std::vector<uint8_t> encoded;
  for (const auto& src : tensors) {
    encode_values(src.values, src.dtype, encoded);
    emit(encoded.data(), encoded.size());
  }
  if (::fsync(fd) != 0) {
    ::close(fd);
    throw_errno("fsync", path);
  }
  if (::close(fd) != 0) throw_errno("close", path);
  return hasher.finish_hex();
}

CheckpointWriter::CheckpointWriter(const std::filesystem::path& path,
                                   CheckpointHeader header)
    : header_(std::move(header)), path_(path) {
  std::string hbytes = header_.canonical_bytes();
  data_offset_ = kHeaderPrefixBytes + hbytes.size();
  fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd_ < 0) throw_errno("open for write", path);
  uint8_t prefix[16];
  std::memcpy(prefix, kMagic, 8);
  uint64_t hlen = hbytes.size();
  for (int i = 0; i < 8; i++) prefix[8 + i] = uint8_t(hlen >> (8 * i));
  write_full(fd_, prefix, sizeof prefix, path_);
  write_full(fd_, hbytes.data(), hbytes.size(), path_);
  // preallocate so concurrent pwrite cannot leave holes past EOF on commit
  uint64_t total = data_offset_ + header_.payload_bytes();
  if (::ftruncate(fd_, off_t(total)) != 0) throw_errno("ftruncate", path);
}

CheckpointWriter::~CheckpointWriter() {
  // no unlink here: a crashed staging file must stay on disk for inspection
  if (fd_ >= 0) ::close(fd_);
}

void CheckpointWriter::write_at(uint64_t data_offset, std::span<const uint8_t> bytes) {
  const uint8_t* ptr = bytes.data();
  size_t len = bytes.size();
  off_t pos = off_t(data_offset_ + data_offset);
  while (len > 0) {
    ssize_t n = ::pwrite(fd_, ptr, len, pos);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw_errno("pwrite", path_);
    }
    ptr += n;
    pos += n;
    len -= size_t(n);
  }
}

void CheckpointWriter::sync_close() {
  if (closed_) throw IoError("checkpoint writer already closed");
  closed_ = true;
  if (::fsync(fd_) != 0) throw_errno("fsync", path_);
  if (::close(fd_) != 0) throw_errno("close", path_);
  fd_ = -1;
}

// ----------------------------------------------------------------------------

CheckpointReader::CheckpointReader(const std::filesystem::path& path) : path_(path) {
  fd_ = ::open(path.c_str(), O_RDONLY);
  if (fd_ < 0) throw_errno("open", path);
  off_t size = ::lseek(fd_, 0, SEEK_END);
  if (size < 0) throw_errno("lseek", path);
  file_size_ = uint64_t(size);

  if (file_size_ < kHeaderPrefixBytes) {
    throw CorruptData("checkpoint " + path.string() + ": shorter than prefix");
  }
  uint8_t prefix[16];
  pread_exact(prefix, sizeof prefix, 0);
  if (std::memcmp(prefix, kMagic, 8) != 0) {
    throw CorruptData("checkpoint " + path.string() + ": bad magic");
  }
  uint64_t hlen = 0;
  for (int i = 0; i < 8; i++) hlen |= uint64_t(prefix[8 + i]) << (8 * i);
  if (hlen > kMaxHeaderBytes || kHeaderPrefixBytes + hlen > file_size_) {
    throw CorruptData("checkpoint " + path.string() + ": absurd header length");
  }
  header_json_bytes_ = hlen;
  std::vector<uint8_t> hbytes(hlen);
  pread_exact(hbytes.data(), hlen, kHeaderPrefixBytes);
  header_ = CheckpointHeader::from_bytes(hbytes);

  uint64_t expect = kHeaderPrefixBytes + hlen + header_.payload_bytes();
  if (file_size_ != expect) {
    throw CorruptData("checkpoint " + path.string() + ": truncated or padded (" +
                      std::to_string(file_size_) + " bytes, expected " +
                      std::to_string(expect) + ")");
  }
}

CheckpointReader::~CheckpointReader() {
  if (fd_ >= 0) ::close(fd_);
}

void CheckpointReader::pread_exact(void* dst, uint64_t len, uint64_t file_offset) const {
  uint8_t* ptr = static_cast<uint8_t*>(dst);
  off_t pos = off_t(file_offset);
  while (len > 0) {
    ssize_t n = ::pread(fd_, ptr, len, pos);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw_errno("pread", path_);
    }
    if (n == 0) {
      throw CorruptData("checkpoint " + path_.string() + ": unexpected EOF");
    }
    ptr += n;
    pos += n;
    len -= uint64_t(n);
  }
}

void CheckpointReader::read_block_raw(size_t tensor_idx, uint64_t block_idx,
                                      uint64_t block_size_elements,
                                      std::vector<uint8_t>& out) const {
  const TensorMeta& t = tensor(tensor_idx);
  BlockSpan span = block_span(t.element_count(), block_size_elements, block_idx);
  size_t esz = dtype_size(t.dtype);
  out.resize(span.element_count * esz);
  uint64_t file_off =
      kHeaderPrefixBytes + header_json_bytes_ + t.offset_bytes + span.start_element * esz;
  pread_exact(out.data(), out.size(), file_off);
}

std::vector<uint8_t> CheckpointReader::read_block_raw(
    size_t tensor_idx, uint64_t block_idx, uint64_t block_size_elements) const {
  std::vector<uint8_t> out;
  read_block_raw(tensor_idx, block_idx, block_size_elements, out);
  return out;
}

std::vector<float> CheckpointReader::read_block_f32(
    size_t tensor_idx, uint64_t block_idx, uint64_t block_size_elements) const {
  std::vector<uint8_t> raw = read_block_raw(tensor_idx, block_idx, block_size_elements);
  std::vector<float> vals;
  decode_values(raw, tensor(tensor_idx).dtype, vals);
  return vals;
}

std::vector<float> CheckpointReader::read_tensor_f32(size_t tensor_idx) const {
  const TensorMeta& t = tensor(tensor_idx);
  std::vector<uint8_t> raw(t.length_bytes);
  pread_exact(raw.data(), raw.size(),
              kHeaderPrefixBytes + header_json_bytes_ + t.offset_bytes);
  std::vector<float> vals;
  decode_values(raw, t.dtype, vals);
  return vals;
}

}  // namespace mergepipe
