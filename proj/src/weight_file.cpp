#include "fraclens/weight_file.hpp"

#include <bit>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace fraclens {

namespace {

using Kind = WeightFileError::Kind;

constexpr char kMagic[4] = {'M', 'W', 'F', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return std::uint32_t{p[0]} | std::uint32_t{p[1]} << 8 | std::uint32_t{p[2]} << 16 | std::uint32_t{p[3]} << 24;
}

std::string join_shape(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  return out;
}

[[noreturn]] void inconsistent(const std::string& why) { throw WeightFileError(Kind::inconsistent, why); }

std::size_t to_size(const std::string& s, const std::string& key) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
    inconsistent("manifest key " + key + " is not a non-negative integer: '" + s + "'");
  return static_cast<std::size_t>(std::stoull(s));
}

Shape to_shape(const std::string& s, const std::string& key) {
  Shape shape;
  for (const auto& part : split(s, ',')) shape.push_back(to_size(part, key));
  if (shape.empty()) inconsistent("manifest key " + key + " has an empty shape");
  for (auto d : shape)
    if (d == 0) inconsistent("manifest key " + key + " has a zero dimension");
  return shape;
}

class Manifest {
 public:
  explicit Manifest(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) inconsistent("manifest line without '=': " + line);
      kv_[line.substr(0, eq)] = line.substr(eq + 1);
    }
  }

  const std::string& get(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) inconsistent("manifest is missing key " + key);
    return it->second;
  }
  std::size_t size(const std::string& key) const { return to_size(get(key), key); }

 private:
  std::map<std::string, std::string> kv_;
};

std::string build_manifest(const Model& model, const WeightMeta& meta) {
  std::ostringstream m;
  m << "format=MWF1\n";
  for (const auto& [k, v] : meta) {
    if (k.empty() || k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
      throw ModelError("metadata entry cannot be serialized: '" + k + "'");
    m << "meta." << k << "=" << v << "\n";
  }
  m << "input_shape=" << join_shape(model.input_shape()) << "\n";
  m << "class_names=";
  for (std::size_t i = 0; i < model.class_names().size(); ++i) {
    const auto& name = model.class_names()[i];
    if (name.empty() || name.find_first_of(",\n=") != std::string::npos)
      throw ModelError("class name cannot be serialized: '" + name + "'");
    m << (i ? "," : "") << name;
  }
  m << "\n";
  m << "layer_count=" << model.layers().size() << "\n";
  for (std::size_t i = 0; i < model.layers().size(); ++i) {
    const auto& l = model.layers()[i];
    const std::string p = "layer." + std::to_string(i) + ".";
    m << p << "kind=" << layer_kind_name(l.kind) << "\n";
    if (l.kind == LayerKind::conv2d) {
      m << p << "out_channels=" << l.out_channels << "\n";
      m << p << "kernel=" << l.kernel << "\n";
      m << p << "padding=" << (l.padding == Padding::same ? "same" : "valid") << "\n";
    } else if (l.kind == LayerKind::dense) {
      m << p << "units=" << l.units << "\n";
    }
  }
  m << "param_count=" << model.parameters().size() << "\n";
  std::size_t offset = 0;
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    const auto& prm = model.parameters()[i];
    const std::string p = "param." + std::to_string(i) + ".";
    const std::size_t bytes = prm.value.size() * 4;
    m << p << "name=" << prm.name << "\n";
    m << p << "shape=" << join_shape(prm.value.shape()) << "\n";
    m << p << "offset=" << offset << "\n";
    m << p << "length=" << bytes << "\n";
    m << p << "trainable=" << (prm.trainable ? 1 : 0) << "\n";
    offset += bytes;
  }
  m << "blob_length=" << offset << "\n";
  return m.str();
}

}  // namespace

std::vector<std::uint8_t> encode_model(const Model& model, const WeightMeta& meta) {
  const std::string manifest = build_manifest(model, meta);
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, static_cast<std::uint32_t>(manifest.size()));
  out.insert(out.end(), manifest.begin(), manifest.end());
  for (const auto& p : model.parameters())
    for (double v : p.value.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

Model decode_model(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw WeightFileError(Kind::bad_magic, "not an MWF1 weight file (bad magic)");
  if (bytes.size() < 8) throw WeightFileError(Kind::truncated, "weight file truncated in header");
  const std::size_t mlen = get_u32(bytes.data() + 4);
  if (bytes.size() < 8 + mlen)
    throw WeightFileError(Kind::truncated, "weight file truncated in manifest (" + std::to_string(mlen) +
                                               " bytes declared, " + std::to_string(bytes.size() - 8) + " present)");
  const Manifest m(std::string(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(mlen)));
  const std::uint8_t* blob = bytes.data() + 8 + mlen;
  const std::size_t blob_size = bytes.size() - 8 - mlen;

  if (m.get("format") != "MWF1") inconsistent("manifest format is '" + m.get("format") + "'");
  const Shape input_shape = to_shape(m.get("input_shape"), "input_shape");
  const auto class_names = split(m.get("class_names"), ',');

  std::vector<LayerSpec> layers;
  const std::size_t nl = m.size("layer_count");
  for (std::size_t i = 0; i < nl; ++i) {
    const std::string p = "layer." + std::to_string(i) + ".";
    LayerSpec spec;
    try {
      spec.kind = parse_layer_kind(m.get(p + "kind"));
    } catch (const ModelError& e) {
      inconsistent(e.what());
    }
    if (spec.kind == LayerKind::conv2d) {
      spec.out_channels = m.size(p + "out_channels");
      spec.kernel = m.size(p + "kernel");
      const auto& pad = m.get(p + "padding");
      if (pad != "same" && pad != "valid") inconsistent("unknown padding '" + pad + "'");
      spec.padding = pad == "same" ? Padding::same : Padding::valid;
    } else if (spec.kind == LayerKind::dense) {
      spec.units = m.size(p + "units");
    }
    layers.push_back(spec);
  }

  const std::size_t np = m.size("param_count");
  const std::size_t declared = m.size("blob_length");
  std::vector<Parameter> params;
  std::size_t expected_offset = 0;
  for (std::size_t i = 0; i < np; ++i) {
    const std::string p = "param." + std::to_string(i) + ".";
    const std::string name = m.get(p + "name");
    const Shape shape = to_shape(m.get(p + "shape"), p + "shape");
    const std::size_t offset = m.size(p + "offset");
    const std::size_t length = m.size(p + "length");
    if (offset != expected_offset)
      inconsistent("parameter " + name + " starts at byte " + std::to_string(offset) + ", expected " +
                   std::to_string(expected_offset) + " (ranges must tile the blob)");
    if (length != shape_size(shape) * 4)
      inconsistent("parameter " + name + " length " + std::to_string(length) + " does not match shape " +
                   to_string(shape));
    expected_offset += length;
    if (expected_offset > declared) inconsistent("parameter " + name + " extends past blob_length");
    if (expected_offset > blob_size)
      throw WeightFileError(Kind::truncated, "weight file truncated: parameter " + name + " needs bytes up to " +
                                                 std::to_string(expected_offset) + ", blob has " +
                                                 std::to_string(blob_size));
    std::vector<double> values(shape_size(shape));
    for (std::size_t k = 0; k < values.size(); ++k)
      values[k] = static_cast<double>(std::bit_cast<float>(get_u32(blob + offset + 4 * k)));
    const auto& tr = m.get(p + "trainable");
    if (tr != "0" && tr != "1") inconsistent("parameter " + name + " has trainable flag '" + tr + "'");
    params.push_back({name, Tensor(shape, std::move(values)), tr == "1"});
  }
  if (expected_offset != declared)
    inconsistent("parameter ranges cover " + std::to_string(expected_offset) + " bytes but blob_length is " +
                 std::to_string(declared));
  if (blob_size < declared)
    throw WeightFileError(Kind::truncated, "weight file truncated: blob has " + std::to_string(blob_size) +
                                               " bytes, manifest declares " + std::to_string(declared));
  if (blob_size > declared)
    inconsistent("blob has " + std::to_string(blob_size - declared) + " trailing bytes beyond the manifest");

  try {
    return Model::create(input_shape, std::move(layers), std::move(params), class_names);
  } catch (const ModelError& e) {
    inconsistent(std::string("structure does not validate: ") + e.what());
  }
}

void save_model(const Model& model, const std::filesystem::path& path, const WeightMeta& meta) {
  const auto bytes = encode_model(model, meta);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw WeightFileError(Kind::io, "cannot open " + path.string() + " for writing: " + std::strerror(errno));
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  os.close();
  if (!os) throw WeightFileError(Kind::io, "write failed for " + path.string() + ": " + std::strerror(errno));
}

Model load_model(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw WeightFileError(Kind::io, "cannot open " + path.string() + ": " + std::strerror(errno));
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_model(bytes);
}

Model quantize_to_f32(const Model& model) {
  Model out = model;
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    Tensor t = model.parameters()[i].value;
    for (auto& v : t.data()) v = static_cast<double>(static_cast<float>(v));
    out.set_parameter_value(i, std::move(t));
  }
  return out;
}

}  // namespace fraclens
