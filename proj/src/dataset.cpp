#include "fraclens/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <set>

#include "fraclens/pgm.hpp"

namespace fraclens {

using nlohmann::json;

std::string_view label_name(Label label) { return label == Label::fractured ? "fractured" : "healthy"; }

Label parse_label(std::string_view name) {
  if (name == "fractured") return Label::fractured;
  if (name == "healthy") return Label::healthy;
  throw DatasetError("unknown label '" + std::string(name) + "'");
}

std::string_view split_name(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw DatasetError("unknown split '" + std::string(name) + "'");
}

std::vector<std::string> default_class_names() { return {"fractured", "healthy"}; }

void AnnotationSet::add(const std::string& image_id, std::vector<Point> points) {
  std::set<Point> seen;
  for (const auto& p : points)
    if (!seen.insert(p).second)
      throw DatasetError("duplicate annotation point (" + std::to_string(p.x) + "," + std::to_string(p.y) +
                         ") for image " + image_id);
  entries_[image_id] = std::move(points);
}

const std::vector<Point>* AnnotationSet::find(const std::string& image_id) const {
  auto it = entries_.find(image_id);
  return it == entries_.end() ? nullptr : &it->second;
}

void AnnotationSet::check_bounds(std::size_t width, std::size_t height) const {
  for (const auto& [id, pts] : entries_)
    for (const auto& p : pts)
      if (p.x < 0 || p.y < 0 || static_cast<std::size_t>(p.x) >= width || static_cast<std::size_t>(p.y) >= height)
        throw DatasetError("annotation point (" + std::to_string(p.x) + "," + std::to_string(p.y) + ") of image " + id +
                           " lies outside " + std::to_string(width) + "x" + std::to_string(height));
}

void write_annotations(const AnnotationSet& ann, const std::filesystem::path& path) {
  json j = json::object();
  for (const auto& [id, pts] : ann.entries()) {
    json arr = json::array();
    for (const auto& p : pts) arr.push_back({p.x, p.y});
    j[id] = std::move(arr);
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DatasetError("cannot write " + path.string());
  os << j.dump(1) << "\n";
}

AnnotationSet read_annotations(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DatasetError("annotation file not found: " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw DatasetError("annotation file " + path.string() + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw DatasetError("annotation file must hold a JSON object keyed by image id");
  AnnotationSet ann;
  for (const auto& [id, arr] : j.items()) {
    if (!arr.is_array()) throw DatasetError("annotations for " + id + " must be a list of [x, y] pairs");
    std::vector<Point> pts;
    for (const auto& p : arr) {
      if (!p.is_array() || p.size() != 2 || !p[0].is_number_integer() || !p[1].is_number_integer())
        throw DatasetError("annotation for " + id + " is not an integer [x, y] pair: " + p.dump());
      pts.push_back({p[0].get<int>(), p[1].get<int>()});
    }
    ann.add(id, std::move(pts));
  }
  return ann;
}

std::vector<std::size_t> Dataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].split == split) out.push_back(i);
  return out;
}

const Sample& Dataset::find(const std::string& id) const {
  for (const auto& s : samples)
    if (s.id == id) return s;
  throw DatasetError("image " + id + " is not in the dataset");
}

ChannelStats channel_stats(const Dataset& ds, Split split) {
  const auto idx = ds.indices(split);
  if (idx.empty()) throw DatasetError("split " + std::string(split_name(split)) + " is empty");
  ChannelStats st{std::vector<double>(ds.channels, 0.0), std::vector<double>(ds.channels, 0.0)};
  const std::size_t plane = ds.height * ds.width;
  const double n = static_cast<double>(idx.size() * plane);
  for (std::size_t c = 0; c < ds.channels; ++c) {
    double s = 0.0, s2 = 0.0;
    for (auto i : idx)
      for (std::size_t p = 0; p < plane; ++p) {
        const double v = ds.samples[i].image[c * plane + p];
        s += v;
        s2 += v * v;
      }
    st.mean[c] = s / n;
    st.stddev[c] = std::sqrt(std::max(s2 / n - st.mean[c] * st.mean[c], 1e-12));
  }
  return st;
}

Tensor mean_image(const Dataset& ds, Split split) {
  const auto idx = ds.indices(split);
  if (idx.empty()) throw DatasetError("split " + std::string(split_name(split)) + " is empty");
  Tensor m({ds.channels, ds.height, ds.width}, 0.0);
  for (auto i : idx) m = m + ds.samples[i].image;
  return (1.0 / static_cast<double>(idx.size())) * m;
}

void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  if (ec) throw DatasetError("cannot create " + (dir / "images").string() + ": " + ec.message());

  json images = json::array();
  const std::size_t plane = ds.height * ds.width;
  for (const auto& s : ds.samples) {
    const auto rel = std::filesystem::path("images") / (s.id + ".pgm");
    const auto vals = s.image.data().subspan(0, plane);
    for (std::size_t c = 1; c < ds.channels; ++c)
      if (!std::equal(vals.begin(), vals.end(), s.image.data().begin() + static_cast<std::ptrdiff_t>(c * plane)))
        throw DatasetError("image " + s.id + " has differing channels; PGM storage needs replicated channels");
    write_pgm(dir / rel, quantize_gray(vals, ds.width, ds.height), {"seed=" + std::to_string(ds.seed)});
    images.push_back({{"id", s.id},
                      {"path", rel.generic_string()},
                      {"label", std::string(label_name(s.label))},
                      {"split", std::string(split_name(s.split))}});
  }
  write_annotations(ds.annotations, dir / "annotations.json");

  json manifest = {{"format", "fraclens-dataset-v1"},
                   {"seed", ds.seed},
                   {"channels", ds.channels},
                   {"height", ds.height},
                   {"width", ds.width},
                   {"annotations", "annotations.json"},
                   {"images", std::move(images)}};
  std::ofstream os(dir / "manifest.json", std::ios::trunc);
  if (!os) throw DatasetError("cannot write " + (dir / "manifest.json").string());
  os << manifest.dump(1) << "\n";
  if (!os) throw DatasetError("write failed for " + (dir / "manifest.json").string());
}

namespace {

const json& field(const json& j, const char* name, const std::string& where) {
  if (!j.is_object() || !j.contains(name)) throw DatasetError(where + ": missing field '" + name + "'");
  return j.at(name);
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw DatasetError("dataset manifest not found: " + manifest_path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw DatasetError("dataset manifest " + manifest_path.string() + " is not valid JSON: " + e.what());
  }
  const std::string where = "dataset manifest " + manifest_path.string();
  const auto base = manifest_path.parent_path();
  Dataset ds;
  try {
    ds.seed = field(j, "seed", where).get<std::uint64_t>();
    ds.channels = field(j, "channels", where).get<std::size_t>();
    ds.height = field(j, "height", where).get<std::size_t>();
    ds.width = field(j, "width", where).get<std::size_t>();
    const auto ann_path = base / field(j, "annotations", where).get<std::string>();
    for (const auto& entry : field(j, "images", where)) {
      Sample s;
      s.id = field(entry, "id", where + " images[]").get<std::string>();
      const auto img = read_pgm(base / field(entry, "path", where + " images[]").get<std::string>());
      if (img.width != ds.width || img.height != ds.height)
        throw DatasetError("image " + s.id + " is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                           ", manifest says " + std::to_string(ds.width) + "x" + std::to_string(ds.height));
      s.image = gray_to_tensor(img, ds.channels);
      s.label = parse_label(field(entry, "label", where + " images[]").get<std::string>());
      s.split = parse_split(field(entry, "split", where + " images[]").get<std::string>());
      ds.samples.push_back(std::move(s));
    }
    ds.annotations = read_annotations(ann_path);
  } catch (const json::exception& e) {
    throw DatasetError(where + ": " + e.what());
  } catch (const std::runtime_error& e) {
    if (dynamic_cast<const DatasetError*>(&e)) throw;
    throw DatasetError(where + ": " + e.what());
  }
  ds.annotations.check_bounds(ds.width, ds.height);
  for (const auto& [id, pts] : ds.annotations.entries()) ds.find(id);
  return ds;
}

}  // namespace fraclens
