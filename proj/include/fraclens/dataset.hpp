#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "fraclens/tensor.hpp"

namespace fraclens {

enum class Label : std::uint8_t { fractured = 0, healthy = 1 };
enum class Split : std::uint8_t { train, val, test };

std::string_view label_name(Label label);
Label parse_label(std::string_view name);
std::string_view split_name(Split split);
Split parse_split(std::string_view name);

/// Class names in logit order; index 0 is the fracture class.
std::vector<std::string> default_class_names();

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Pixel coordinate: x is the column, y the row.
struct Point {
  int x = 0;
  int y = 0;

  friend auto operator<=>(const Point&, const Point&) = default;
};

/// Expert fracture coordinates keyed by image id.
class AnnotationSet {
 public:
  /// Rejects duplicate points within the entry.
  void add(const std::string& image_id, std::vector<Point> points);
  const std::vector<Point>* find(const std::string& image_id) const;
  const std::map<std::string, std::vector<Point>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  /// Every point inside [0, width) x [0, height); throws naming the image.
  void check_bounds(std::size_t width, std::size_t height) const;

  friend bool operator==(const AnnotationSet&, const AnnotationSet&) = default;

 private:
  std::map<std::string, std::vector<Point>> entries_;
};

/// JSON object: {"<image_id>": [[x, y], ...], ...}
void write_annotations(const AnnotationSet& ann, const std::filesystem::path& path);
AnnotationSet read_annotations(const std::filesystem::path& path);

struct Sample {
  std::string id;
  Tensor image;  // [C, H, W], values in [0, 1]
  Label label = Label::healthy;
  Split split = Split::train;

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct Dataset {
  std::size_t channels = 1;
  std::size_t height = 0;
  std::size_t width = 0;
  std::uint64_t seed = 0;
  std::vector<Sample> samples;
  AnnotationSet annotations;

  std::vector<std::size_t> indices(Split split) const;
  const Sample& find(const std::string& id) const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Per-channel mean and standard deviation over one split.
struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};
ChannelStats channel_stats(const Dataset& ds, Split split);

/// Per-pixel mean image over one split.
Tensor mean_image(const Dataset& ds, Split split);

/// Writes images/<id>.pgm, annotations.json and manifest.json into dir.
/// Multi-channel datasets must carry identical channels; one plane is stored.
void write_dataset(const Dataset& ds, const std::filesystem::path& dir);

/// Dataset manifest (JSON): format, seed, channels, height, width, annotations
/// (path relative to the manifest) and images [{id, path, label, split}].
Dataset load_dataset(const std::filesystem::path& manifest_path);

}  // namespace fraclens
