#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mergepipe/dtype.hpp"

namespace mergepipe {

// ============================================================================
// MPCK-v1 checkpoint container
//
//   bytes 0..7    ASCII magic "MPCKPT01"
//   bytes 8..15   little-endian u64 header length N
//   bytes 16..16+N UTF-8 canonical JSON header (sorted keys, no whitespace):
//                 {"model_id": str,
//                  "tensors": [{"name","dtype","shape",
//                               "offset_bytes","length_bytes"}, ...]}
//   then          raw little-endian tensor payloads, concatenated in header
//                 order; offset_bytes are relative to the data region start
//                 (byte 16+N)
// ============================================================================

inline constexpr char kMagic[8] = {'M', 'P', 'C', 'K', 'P', 'T', '0', '1'};
inline constexpr uint64_t kHeaderPrefixBytes = 16;
inline constexpr uint64_t kMaxHeaderBytes = 64ull << 20;

inline constexpr uint64_t kDefaultBlockElements = 131072;

struct TensorMeta {
  std::string name;
  DType dtype = DType::kF32;
  std::vector<uint64_t> shape;
  uint64_t offset_bytes = 0;
  uint64_t length_bytes = 0;

  uint64_t element_count() const;
  nlohmann::json to_json() const;
  static TensorMeta from_json(const nlohmann::json& j);
};

struct CheckpointHeader {
  std::string model_id;
  std::vector<TensorMeta> tensors;

  uint64_t payload_bytes() const;
  const TensorMeta* find(const std::string& name) const;
  // Canonical header bytes as stored on disk. Equal logical content gives
  // equal bytes, so file hashes are stable across writes.
  std::string canonical_bytes() const;
  static CheckpointHeader from_bytes(std::span<const uint8_t> bytes);
};

// Fixed-size partition of a tensor's flattened row-major element array.
// The final block may be short; every element belongs to exactly one block.
uint64_t block_count(uint64_t element_count, uint64_t block_size_elements);

struct BlockSpan {
  uint64_t start_element;
  uint64_t element_count;
};
BlockSpan block_span(uint64_t element_count, uint64_t block_size_elements,
                     uint64_t block_idx);

// Throws ShapeMismatch/MissingTensor unless b has exactly a's tensor names,
// shapes and dtypes (in any order; order is also checked by callers that
// stream). Used before delta analysis and merging.
void require_same_structure(const CheckpointHeader& a, const CheckpointHeader& b);

// ----------------------------------------------------------------------------

struct TensorInit {
  std::string name;
  DType dtype = DType::kF32;
  std::vector<uint64_t> shape;
  std::vector<float> values;  // encoded to dtype on write
};

// One-shot sequential writer. Returns the SHA-256 hex of the entire file.
std::string write_checkpoint(const std::filesystem::path& path,
                             const std::string& model_id,
                             const std::vector<TensorInit>& tensors);

// Random-access writer for the engine's staging path: header up front, block
// payloads land via pwrite at precomputed offsets (any order, any thread).
class CheckpointWriter {
 public:
  CheckpointWriter(const std::filesystem::path& path, CheckpointHeader header);
  ~CheckpointWriter();
  CheckpointWriter(const CheckpointWriter&) = delete;
  CheckpointWriter& operator=(const CheckpointWriter&) = delete;

  const CheckpointHeader& header() const { return header_; }
  uint64_t data_region_offset() const { return data_offset_; }

  // data_offset is relative to the data region start.
  void write_at(uint64_t data_offset, std::span<const uint8_t> bytes);

  // Flushes file contents to disk and closes. Must be called exactly once.
  void sync_close();

 private:
  CheckpointHeader header_;
  std::filesystem::path path_;
  int fd_ = -1;
  uint64_t data_offset_ = 0;
  bool closed_ = false;
};

class CheckpointReader {
 public:
  explicit CheckpointReader(const std::filesystem::path& path);
  ~CheckpointReader();
  CheckpointReader(const CheckpointReader&) = delete;
  CheckpointReader& operator=(const CheckpointReader&) = delete;

  const CheckpointHeader& header() const { return header_; }
  const std::filesystem::path& path() const { return path_; }
  const TensorMeta& tensor(size_t idx) const { return header_.tensors.at(idx); }
  size_t tensor_count() const { return header_.tensors.size(); }

  // Raw bytes of one block. Thread-safe (pread).
  std::vector<uint8_t> read_block_raw(size_t tensor_idx, uint64_t block_idx,
                                      uint64_t block_size_elements) const;
  void read_block_raw(size_t tensor_idx, uint64_t block_idx,
                      uint64_t block_size_elements,
                      std::vector<uint8_t>& out) const;

  std::vector<float> read_block_f32(size_t tensor_idx, uint64_t block_idx,
                                    uint64_t block_size_elements) const;

  std::vector<float> read_tensor_f32(size_t tensor_idx) const;

  // Bytes of the header region (magic + length + header JSON).
  uint64_t header_region_bytes() const { return kHeaderPrefixBytes + header_json_bytes_; }

 private:
  void pread_exact(void* dst, uint64_t len, uint64_t file_offset) const;

  std::filesystem::path path_;
  CheckpointHeader header_;
  uint64_t header_json_bytes_ = 0;
  uint64_t file_size_ = 0;
  int fd_ = -1;
};

}  // namespace mergepipe
