#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sylloscope/tensor.hpp"

namespace syl {

/// Entry in the checkpoint header: dtype, shape, and the byte range of the
/// raw row-major data relative to the start of the data section.
struct TensorInfo {
    std::string dtype;
    std::vector<int64_t> shape;
    uint64_t begin = 0;
    uint64_t end = 0;
};

/// Single-file named-tensor container: an 8-byte little-endian header length,
/// a JSON header mapping tensor name -> {dtype, shape, data_offsets}, then
/// the raw data section.
class CheckpointFile {
public:
    static CheckpointFile open(const std::filesystem::path& path);

    bool has(const std::string& name) const { return entries_.count(name) > 0; }
    const TensorInfo& info(const std::string& name) const;
    std::vector<std::string> names() const;

    /// Reads one F32 tensor; validates dtype and that the byte range matches
    /// the header shape.
    Tensor read_f32(const std::string& name) const;

    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    uint64_t data_offset_ = 0;
    std::map<std::string, TensorInfo> entries_;
};

/// Writes a container in the same layout (F32 only). Used by tools and tests
/// to materialize toy checkpoints.
void write_checkpoint(const std::filesystem::path& path,
                      const std::vector<std::pair<std::string, const Tensor*>>& tensors);

}  // namespace syl
