#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace anomaforge {

/// Lower-case hex SHA-256 of a byte buffer.
std::string sha256_hex(std::span<const unsigned char> bytes);

/// SHA-256 of a file's contents. Throws DataError if the file cannot be read.
std::string sha256_file(const std::filesystem::path& path);

/// Digest over the raw bytes of every tensor, in order, together with
/// their shapes and dtypes. Used to prove parameters were not modified.
std::string sha256_tensors(const std::vector<torch::Tensor>& tensors);

}  // namespace anomaforge
