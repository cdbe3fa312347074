#pragma once

// MWF1 weight files:
//   "MWF1" | u32 LE manifest length | manifest text | blob
// The manifest is newline-separated key=value text describing the layers and,
// per parameter, its name, shape, byte offset, byte length and trainable flag.
// The blob holds little-endian IEEE-754 binary32 values, row-major per tensor,
// in manifest order; the byte ranges tile it exactly.

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "fraclens/model.hpp"

namespace fraclens {

class WeightFileError : public std::runtime_error {
 public:
  enum class Kind { io, bad_magic, truncated, inconsistent };

  WeightFileError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Free-form key=value entries stored as "meta.<key>" manifest lines and
/// ignored on load (seed, training digest).
using WeightMeta = std::map<std::string, std::string>;

std::vector<std::uint8_t> encode_model(const Model& model, const WeightMeta& meta = {});
Model decode_model(const std::vector<std::uint8_t>& bytes);

void save_model(const Model& model, const std::filesystem::path& path, const WeightMeta& meta = {});
Model load_model(const std::filesystem::path& path);

/// Rounds every parameter through binary32, i.e. what a save/load cycle yields.
Model quantize_to_f32(const Model& model);

}  // namespace fraclens
