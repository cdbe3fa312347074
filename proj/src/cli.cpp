#include "fraclens/cli.hpp"

#include <CLI11.hpp>
#include <fstream>
#include <json.hpp>
#include <optional>
#include <ostream>
#include <sstream>

#include "fraclens/attack.hpp"
#include "fraclens/attribution.hpp"
#include "fraclens/autodiff.hpp"
#include "fraclens/coverage.hpp"
#include "fraclens/dataset.hpp"
#include "fraclens/synth.hpp"
#include "fraclens/train.hpp"
#include "fraclens/weight_file.hpp"

namespace fraclens::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// "4/255" or "0.0157"
double parse_fraction(const std::string& text, const std::string& flag) {
  try {
    const auto slash = text.find('/');
    std::size_t used = 0;
    if (slash == std::string::npos) {
      const double v = std::stod(text, &used);
      if (used != text.size()) throw std::invalid_argument(text);
      return v;
    }
    const std::string num = text.substr(0, slash), den = text.substr(slash + 1);
    const double a = std::stod(num, &used);
    if (used != num.size()) throw std::invalid_argument(text);
    const double b = std::stod(den, &used);
    if (used != den.size() || b == 0.0) throw std::invalid_argument(text);
    return a / b;
  } catch (const std::logic_error&) {
    throw UsageError(flag + ": cannot parse '" + text + "' as a number or fraction");
  }
}

std::vector<std::string> split_list(const std::vector<std::string>& items) {
  std::vector<std::string> out;
  for (const auto& item : items) {
    std::stringstream ss(item);
    std::string part;
    while (std::getline(ss, part, ','))
      if (!part.empty()) out.push_back(part);
  }
  return out;
}

// Settings gathered from an optional run manifest; flags override them.
struct RunManifest {
  fs::path dataset;
  std::optional<fs::path> annotations;
  std::vector<fs::path> models;
  std::optional<fs::path> out;
  std::optional<std::uint64_t> seed;
  json train = json::object();
  json attack = json::object();
  json attribution = json::object();
  json coverage = json::object();
};

json section(const json& j, const char* name) {
  if (!j.contains(name)) return json::object();
  if (!j.at(name).is_object()) throw UsageError(std::string("run manifest field '") + name + "' must be an object");
  return j.at(name);
}

// A dataset manifest (has "images") is accepted directly as a run manifest
// that names only the dataset.
RunManifest load_run_manifest(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw UsageError("manifest not found: " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw UsageError("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  RunManifest rm;
  const auto base = path.parent_path();
  if (j.contains("images")) {
    rm.dataset = path;
    return rm;
  }
  const auto resolve = [&](const json& v, const std::string& field) {
    if (!v.is_string()) throw UsageError("run manifest field '" + field + "' must be a path string");
    fs::path p = v.get<std::string>();
    return p.is_absolute() ? p : base / p;
  };
  if (!j.contains("dataset")) throw UsageError("run manifest " + path.string() + ": missing field 'dataset'");
  rm.dataset = resolve(j.at("dataset"), "dataset");
  if (!fs::exists(rm.dataset)) throw UsageError("run manifest field 'dataset': " + rm.dataset.string() + " not found");
  if (j.contains("annotations")) {
    rm.annotations = resolve(j.at("annotations"), "annotations");
    if (!fs::exists(*rm.annotations))
      throw UsageError("run manifest field 'annotations': " + rm.annotations->string() + " not found");
  }
  if (j.contains("models")) {
    if (!j.at("models").is_array()) throw UsageError("run manifest field 'models' must be a list");
    for (const auto& m : j.at("models")) {
      rm.models.push_back(resolve(m, "models"));
      if (!fs::exists(rm.models.back()))
        throw UsageError("run manifest field 'models': " + rm.models.back().string() + " not found");
    }
  }
  if (j.contains("out")) rm.out = resolve(j.at("out"), "out");
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned()) throw UsageError("run manifest field 'seed' must be a non-negative integer");
    rm.seed = j.at("seed").get<std::uint64_t>();
  }
  rm.train = section(j, "train");
  rm.attack = section(j, "attack");
  rm.attribution = section(j, "attribution");
  rm.coverage = section(j, "coverage");
  return rm;
}

template <typename T>
void take(const json& sec, const char* key, const std::string& where, T& dst) {
  if (!sec.contains(key)) return;
  try {
    dst = sec.at(key).get<T>();
  } catch (const json::exception&) {
    throw UsageError("run manifest field '" + where + "." + key + "' has the wrong type");
  }
}

double take_fraction(const json& sec, const char* key, const std::string& where, double dflt) {
  if (!sec.contains(key)) return dflt;
  const auto& v = sec.at(key);
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) return parse_fraction(v.get<std::string>(), where + "." + key);
  throw UsageError("run manifest field '" + where + "." + key + "' has the wrong type");
}

// Marks an output as in progress, then ok or failed; a failed or
// interrupted run leaves "running"/"failed" behind.
class RunStatus {
 public:
  RunStatus(fs::path path, std::string command, std::uint64_t seed)
      : path_(std::move(path)), command_(std::move(command)), seed_(seed) {
    write("running", "");
  }
  void ok() {
    write("ok", "");
    done_ = true;
  }
  void failed(const std::string& why) {
    write("failed", why);
    done_ = true;
  }
  ~RunStatus() {
    if (!done_) write("failed", "interrupted");
  }

 private:
  void write(const std::string& status, const std::string& error) const {
    std::ofstream os(path_, std::ios::trunc);
    json j = {{"command", command_}, {"status", status}, {"seed", seed_}};
    if (!error.empty()) j["error"] = error;
    os << j.dump(1) << "\n";
  }

  fs::path path_;
  std::string command_;
  std::uint64_t seed_;
  bool done_ = false;
};

fs::path status_path_for_file(const fs::path& out) { return fs::path(out.string() + ".status.json"); }

void ensure_parent(const fs::path& file) {
  const auto parent = file.parent_path();
  if (parent.empty()) return;
  std::error_code ec;
  fs::create_directories(parent, ec);
  if (ec) throw std::runtime_error("cannot create directory " + parent.string() + ": " + ec.message());
}

std::string model_id(const fs::path& p) { return p.stem().string(); }

// Flags shared by the commands that read a dataset.
struct Common {
  std::string manifest;
  std::string out;
  std::uint64_t seed = 42;
};

struct Context {
  RunManifest run;
  Dataset ds;
  std::uint64_t seed = 42;
  fs::path out;
};

Context load_context(const Common& c, const CLI::App& cmd, bool need_out) {
  if (c.manifest.empty()) throw UsageError("--manifest is required");
  Context ctx;
  ctx.run = load_run_manifest(c.manifest);
  try {
    ctx.ds = load_dataset(ctx.run.dataset);
  } catch (const DatasetError& e) {
    throw UsageError(e.what());
  }
  ctx.seed = cmd.count("--seed") ? c.seed : ctx.run.seed.value_or(c.seed);
  if (!c.out.empty())
    ctx.out = c.out;
  else if (ctx.run.out)
    ctx.out = *ctx.run.out;
  else if (need_out)
    throw UsageError("--out is required");
  return ctx;
}

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--manifest", c.manifest, "Run manifest or dataset manifest (JSON)");
  cmd->add_option("--out", c.out, "Output path");
  cmd->add_option("--seed", c.seed, "Global seed");
}

// -- synth -----------------------------------------------------------------

struct SynthArgs {
  std::uint64_t seed = 42;
  std::size_t n = 800;
  std::string out;
  std::size_t channels = 1;
  std::size_t size = 64;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  if (a.n < 2 || a.n % 2 != 0) throw UsageError("--n must be even and at least 2, got " + std::to_string(a.n));
  if (a.channels != 1 && a.channels != 3) throw UsageError("--channels must be 1 or 3");
  const fs::path dir = a.out;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + dir.string() + ": " + ec.message());
  RunStatus status(dir / "run_status.json", "synth", a.seed);
  SynthConfig cfg;
  cfg.channels = a.channels;
  cfg.height = cfg.width = a.size;
  const Dataset ds = generate_dataset(a.seed, a.n, cfg);
  write_dataset(ds, dir);
  status.ok();
  out << "wrote " << ds.samples.size() << " images to " << dir.string() << "\n";
  return 0;
}

// -- train -----------------------------------------------------------------

struct TrainArgs {
  Common common;
  std::string mode = "standard";
  std::size_t epochs = 30;
  double lr = 1e-3;
  std::size_t batch = 32;
  std::string eps = "4/255";
  std::string step = "1/255";
  std::size_t iters = 10;
  std::string init;
  bool head_only = false;
};

int cmd_train(const TrainArgs& a, const CLI::App& cmd, std::ostream& out) {
  if (a.mode != "standard" && a.mode != "adversarial")
    throw UsageError("--mode must be 'standard' or 'adversarial', got '" + a.mode + "'");
  auto ctx = load_context(a.common, cmd, true);
  const auto& rm = ctx.run;

  TrainConfig tc;
  tc.epochs = a.epochs;
  tc.learning_rate = a.lr;
  tc.batch_size = a.batch;
  take(rm.train, "epochs", "train", tc.epochs);
  take(rm.train, "learning_rate", "train", tc.learning_rate);
  take(rm.train, "batch_size", "train", tc.batch_size);
  take(rm.train, "head_only", "train", tc.head_only);
  if (cmd.count("--epochs")) tc.epochs = a.epochs;
  if (cmd.count("--lr")) tc.learning_rate = a.lr;
  if (cmd.count("--batch")) tc.batch_size = a.batch;
  if (cmd.count("--head-only")) tc.head_only = a.head_only;
  tc.seed = ctx.seed;
  try {
    tc.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  AttackConfig atk;
  atk.epsilon = take_fraction(rm.attack, "epsilon", "attack", parse_fraction(a.eps, "--eps"));
  atk.step_size = take_fraction(rm.attack, "step_size", "attack", parse_fraction(a.step, "--step"));
  atk.iters = a.iters;
  take(rm.attack, "iters", "attack", atk.iters);
  if (cmd.count("--eps")) atk.epsilon = parse_fraction(a.eps, "--eps");
  if (cmd.count("--step")) atk.step_size = parse_fraction(a.step, "--step");
  if (cmd.count("--iters")) atk.iters = a.iters;
  atk.seed = derive_seed(ctx.seed, 0xa77ac);

  if (ctx.ds.indices(Split::train).empty()) throw UsageError("dataset has an empty train split");
  Model model = [&] {
    if (!a.init.empty()) {
      Model base = load_model(a.init);
      if (!tc.head_only) return base;
      return freeze_backbone(replace_head(base, default_class_names(), ctx.seed));
    }
    if (tc.head_only) throw UsageError("--head-only needs --init with a pretrained backbone");
    const auto st = channel_stats(ctx.ds, Split::train);
    return make_tiny_cnn({ctx.ds.channels, ctx.ds.height, ctx.ds.width}, default_class_names(), ctx.seed, st.mean,
                         st.stddev);
  }();

  ensure_parent(ctx.out);
  RunStatus status(status_path_for_file(ctx.out), "train", ctx.seed);
  const auto result = a.mode == "adversarial" ? adv_train(model, ctx.ds, atk, tc) : train(model, ctx.ds, tc);
  WeightMeta meta = {{"seed", std::to_string(ctx.seed)},
                     {"mode", a.mode},
                     {"train", "epochs=" + std::to_string(tc.epochs) + ";lr=" + std::to_string(tc.learning_rate) +
                                   ";batch=" + std::to_string(tc.batch_size) + ";head_only=" +
                                   std::to_string(tc.head_only ? 1 : 0)}};
  if (a.mode == "adversarial") meta["attack"] = atk.digest();
  save_model(result.model, ctx.out, meta);

  json metrics = {{"mode", a.mode},
                  {"seed", ctx.seed},
                  {"epochs", tc.epochs},
                  {"learning_rate", tc.learning_rate},
                  {"batch_size", tc.batch_size},
                  {"head_only", tc.head_only},
                  {"epoch_loss", result.epoch_loss}};
  if (a.mode == "adversarial") metrics["attack"] = atk.digest();
  json acc = json::object();
  for (auto split : {Split::train, Split::val, Split::test})
    if (!ctx.ds.indices(split).empty()) acc[std::string(split_name(split))] = evaluate(result.model, ctx.ds, split);
  metrics["clean_accuracy"] = acc;
  const fs::path metrics_path = fs::path(ctx.out.string() + ".metrics.json");
  std::ofstream os(metrics_path, std::ios::trunc);
  os << metrics.dump(1) << "\n";
  if (!os) throw std::runtime_error("write failed for " + metrics_path.string());
  status.ok();
  out << "saved " << ctx.out.string() << " (final loss " << result.epoch_loss.back() << ")\n";
  return 0;
}

// -- attack ----------------------------------------------------------------

struct AttackArgs {
  Common common;
  std::vector<std::string> models;
  std::string eps = "4/255";
  std::string step = "1/255";
  std::size_t iters = 10;
  bool random_start = false;
  std::string split = "test";
};

std::vector<fs::path> model_paths(const std::vector<std::string>& flags, const RunManifest& rm) {
  std::vector<fs::path> paths;
  for (const auto& m : split_list(flags)) paths.emplace_back(m);
  if (paths.empty()) paths = rm.models;
  if (paths.empty()) throw UsageError("no models given (--model or run manifest 'models')");
  return paths;
}

std::vector<std::pair<std::string, Model>> load_models(const std::vector<fs::path>& paths) {
  std::vector<std::pair<std::string, Model>> models;
  for (const auto& p : paths) {
    try {
      models.emplace_back(model_id(p), load_model(p));
    } catch (const std::exception& e) {
      throw std::runtime_error("cannot load model " + p.string() + ": " + e.what());
    }
  }
  return models;
}

Split parse_split_flag(const std::string& s) {
  try {
    return parse_split(s);
  } catch (const DatasetError& e) {
    throw UsageError(e.what());
  }
}

int cmd_attack(const AttackArgs& a, const CLI::App& cmd, std::ostream& out) {
  auto ctx = load_context(a.common, cmd, true);
  const auto& rm = ctx.run;
  AttackConfig atk;
  atk.epsilon = take_fraction(rm.attack, "epsilon", "attack", parse_fraction(a.eps, "--eps"));
  atk.step_size = take_fraction(rm.attack, "step_size", "attack", parse_fraction(a.step, "--step"));
  atk.iters = a.iters;
  atk.random_start = a.random_start;
  take(rm.attack, "iters", "attack", atk.iters);
  take(rm.attack, "random_start", "attack", atk.random_start);
  if (cmd.count("--eps")) atk.epsilon = parse_fraction(a.eps, "--eps");
  if (cmd.count("--step")) atk.step_size = parse_fraction(a.step, "--step");
  if (cmd.count("--iters")) atk.iters = a.iters;
  if (cmd.count("--random-start")) atk.random_start = a.random_start;
  atk.seed = ctx.seed;
  try {
    atk.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const Split split = parse_split_flag(a.split);
  if (ctx.ds.indices(split).empty()) throw UsageError("split " + a.split + " is empty");

  const auto models = load_models(model_paths(a.models, rm));
  ensure_parent(ctx.out);
  RunStatus status(status_path_for_file(ctx.out), "attack", ctx.seed);
  std::vector<RobustnessReport> reports;
  for (const auto& [id, model] : models) {
    const double clean = 100.0 * evaluate(model, ctx.ds, split);
    const double adv = 100.0 * adv_accuracy(model, ctx.ds, split, atk);
    reports.push_back(RobustnessReport::make(id, clean, adv));
  }
  reports = rank_models(std::move(reports));
  write_robustness_csv(reports, ctx.out,
                       {"seed=" + std::to_string(ctx.seed), "config=" + atk.digest() + ";split=" + a.split});
  status.ok();
  for (const auto& r : reports)
    out << r.model_id << ": clean " << format_percent(r.clean_acc) << "% adv " << format_percent(r.adv_acc) << "%\n";
  return 0;
}

// -- attribute / coverage shared settings ----------------------------------

struct MapArgs {
  std::vector<std::string> methods;
  std::size_t patch = 8;
  std::size_t stride = 4;
  double occlusion_baseline = 0.0;
  bool per_channel = false;
  std::size_t ig_steps = 20;
  std::string reference = "zero";
};

void add_map_options(CLI::App* cmd, MapArgs& m) {
  cmd->add_option("--methods", m.methods, "Comma-separated attribution methods");
  cmd->add_option("--patch", m.patch, "Occlusion patch size (square)");
  cmd->add_option("--stride", m.stride, "Occlusion stride");
  cmd->add_option("--occlusion-baseline", m.occlusion_baseline, "Occlusion replacement intensity");
  cmd->add_flag("--per-channel", m.per_channel, "Occlude channels separately and sum");
  cmd->add_option("--ig-steps", m.ig_steps, "Integrated-gradients Riemann steps");
  cmd->add_option("--reference", m.reference, "DeepLIFT/IG baseline: zero or mean");
}

std::vector<Method> parse_methods(const std::vector<std::string>& names) {
  std::vector<Method> out;
  for (const auto& n : split_list(names)) {
    auto m = parse_method(n);
    if (!m) {
      std::string valid;
      for (auto v : all_methods()) valid += (valid.empty() ? "" : ", ") + std::string(method_name(v));
      throw UsageError("unknown method '" + n + "'; valid methods: " + valid);
    }
    out.push_back(*m);
  }
  return out;
}

CoverageSettings map_settings(const MapArgs& a, const CLI::App& cmd, const RunManifest& rm, const Dataset& ds) {
  CoverageSettings s;
  const auto& sec = rm.attribution;
  std::size_t patch = a.patch, stride = a.stride;
  std::string reference = a.reference;
  s.occlusion.baseline_value = a.occlusion_baseline;
  s.occlusion.per_channel = a.per_channel;
  s.ig_steps = a.ig_steps;
  take(sec, "patch", "attribution", patch);
  take(sec, "stride", "attribution", stride);
  take(sec, "occlusion_baseline", "attribution", s.occlusion.baseline_value);
  take(sec, "per_channel", "attribution", s.occlusion.per_channel);
  take(sec, "ig_steps", "attribution", s.ig_steps);
  take(sec, "reference", "attribution", reference);
  if (cmd.count("--patch")) patch = a.patch;
  if (cmd.count("--stride")) stride = a.stride;
  if (cmd.count("--occlusion-baseline")) s.occlusion.baseline_value = a.occlusion_baseline;
  if (cmd.count("--per-channel")) s.occlusion.per_channel = a.per_channel;
  if (cmd.count("--ig-steps")) s.ig_steps = a.ig_steps;
  if (cmd.count("--reference")) reference = a.reference;
  s.occlusion.patch_h = s.occlusion.patch_w = patch;
  s.occlusion.stride_h = s.occlusion.stride_w = stride;
  try {
    s.occlusion.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (s.ig_steps < 1) throw UsageError("--ig-steps must be >= 1");
  if (reference == "mean") {
    s.reference = mean_image(ds, Split::train);
  } else if (reference != "zero") {
    throw UsageError("--reference must be 'zero' or 'mean', got '" + reference + "'");
  }
  s.reference_name = reference;
  return s;
}

// -- attribute -------------------------------------------------------------

struct AttributeArgs {
  Common common;
  std::string model;
  std::vector<std::string> images;
  std::string target = "predicted";
  MapArgs map;
};

int cmd_attribute(const AttributeArgs& a, const CLI::App& cmd, std::ostream& out) {
  auto ctx = load_context(a.common, cmd, true);
  std::vector<std::string> method_names = a.map.methods;
  if (method_names.empty() && ctx.run.attribution.contains("methods"))
    take(ctx.run.attribution, "methods", "attribution", method_names);
  if (method_names.empty()) throw UsageError("--methods is required");
  const auto methods = parse_methods(method_names);
  auto settings = map_settings(a.map, cmd, ctx.run, ctx.ds);

  const auto ids = split_list(a.images);
  if (ids.empty()) throw UsageError("--images is required");
  std::vector<const Sample*> samples;
  for (const auto& id : ids) {
    try {
      samples.push_back(&ctx.ds.find(id));
    } catch (const DatasetError& e) {
      throw UsageError(e.what());
    }
  }
  fs::path model_path = a.model;
  if (model_path.empty()) {
    if (ctx.run.models.size() != 1) throw UsageError("--model is required");
    model_path = ctx.run.models.front();
  }
  const auto models = load_models({model_path});
  const Model& model = models.front().second;

  std::optional<std::size_t> fixed_target;
  if (a.target != "predicted") {
    try {
      fixed_target = std::stoul(a.target);
    } catch (const std::logic_error&) {
      throw UsageError("--target must be 'predicted' or a class index");
    }
    if (*fixed_target >= model.num_classes()) throw UsageError("--target out of range");
  }

  std::error_code ec;
  fs::create_directories(ctx.out, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + ctx.out.string() + ": " + ec.message());
  RunStatus status(ctx.out / "run_status.json", "attribute", ctx.seed);
  std::size_t written = 0;
  for (const Sample* s : samples) {
    settings.target_class = fixed_target ? *fixed_target : argmax(predict(model, s->image).data());
    for (Method m : methods) {
      const auto map = compute_attribution(model, s->image, m, settings);
      const auto name = s->id + "__" + std::string(method_name(m)) + "__c" + std::to_string(settings.target_class);
      write_heatmap(map, ctx.out / (name + ".pgm"), ctx.seed);
      ++written;
    }
  }
  status.ok();
  out << "wrote " << written << " heatmaps to " << ctx.out.string() << "\n";
  return 0;
}

// -- coverage --------------------------------------------------------------

struct CoverageArgs {
  Common common;
  std::vector<std::string> models;
  std::vector<std::string> percentiles;
  std::string annotations;
  std::size_t target = 0;
  std::string split = "test";
  MapArgs map;
};

int cmd_coverage(const CoverageArgs& a, const CLI::App& cmd, std::ostream& out) {
  auto ctx = load_context(a.common, cmd, true);
  const auto& rm = ctx.run;

  fs::path ann_path;
  if (!a.annotations.empty())
    ann_path = a.annotations;
  else if (rm.annotations)
    ann_path = *rm.annotations;
  AnnotationSet ann;
  if (ann_path.empty()) {
    // annotations listed in the dataset manifest were loaded with it
    if (ctx.ds.annotations.size() == 0) throw UsageError("no annotation file available");
    ann = ctx.ds.annotations;
  } else {
    if (!fs::exists(ann_path)) throw UsageError("annotation file not found: " + ann_path.string());
    ann = read_annotations(ann_path);
    ann.check_bounds(ctx.ds.width, ctx.ds.height);
  }

  std::vector<std::string> method_names = a.map.methods;
  if (method_names.empty()) take(rm.coverage, "methods", "coverage", method_names);
  if (method_names.empty()) method_names = {"integrated_gradients", "deeplift", "saliency"};
  const auto methods = parse_methods(method_names);

  std::vector<double> percentiles;
  for (const auto& p : split_list(a.percentiles)) percentiles.push_back(parse_fraction(p, "--percentiles"));
  if (percentiles.empty()) take(rm.coverage, "percentiles", "coverage", percentiles);
  if (percentiles.empty()) percentiles = {95, 85, 75, 15};
  for (double p : percentiles)
    if (!(p >= 0.0 && p <= 100.0)) throw UsageError("percentiles must lie in [0, 100]");

  auto settings = map_settings(a.map, cmd, rm, ctx.ds);
  settings.target_class = a.target;
  take(rm.coverage, "target_class", "coverage", settings.target_class);
  if (cmd.count("--target")) settings.target_class = a.target;
  std::string split = a.split;
  take(rm.coverage, "split", "coverage", split);
  if (cmd.count("--split")) split = a.split;
  settings.split = parse_split_flag(split);

  const auto models = load_models(model_paths(a.models, rm));
  for (const auto& [id, m] : models)
    if (settings.target_class >= m.num_classes()) throw UsageError("--target out of range for model " + id);
  std::vector<NamedModel> named;
  for (const auto& [id, m] : models) named.push_back({id, &m});

  ensure_parent(ctx.out);
  RunStatus status(status_path_for_file(ctx.out), "coverage", ctx.seed);
  const auto report = coverage_table(named, methods, percentiles, ctx.ds, ann, settings);
  std::string digest = "target=" + std::to_string(settings.target_class) + ";split=" + split + ";" +
                       settings.occlusion.digest() + ";ig_steps=" + std::to_string(settings.ig_steps) +
                       ";reference=" + settings.reference_name;
  write_coverage_csv(report, ctx.out, {"seed=" + std::to_string(ctx.seed), "config=" + digest});
  status.ok();
  out << "wrote " << report.rows.size() << " coverage rows to " << ctx.out.string() << "\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"fraclens: robustness and attribution-alignment toolkit for fracture classifiers", "fraclens"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic fracture corpus");
  synth_cmd->add_option("--seed", synth.seed, "Generator seed");
  synth_cmd->add_option("--n", synth.n, "Number of images (even)");
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();
  synth_cmd->add_option("--channels", synth.channels, "1 or 3 (replicated) channels");
  synth_cmd->add_option("--size", synth.size, "Image height and width");

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train a tiny CNN (standard or PGD-adversarial)");
  add_common(train_cmd, train_args.common);
  train_cmd->add_option("--mode", train_args.mode, "standard | adversarial");
  train_cmd->add_option("--epochs", train_args.epochs, "Epochs");
  train_cmd->add_option("--lr", train_args.lr, "Adam learning rate");
  train_cmd->add_option("--batch", train_args.batch, "Batch size");
  train_cmd->add_option("--eps", train_args.eps, "PGD radius for adversarial mode, e.g. 4/255");
  train_cmd->add_option("--step", train_args.step, "PGD step size, e.g. 1/255");
  train_cmd->add_option("--iters", train_args.iters, "PGD iterations");
  train_cmd->add_option("--init", train_args.init, "Start from this weight file");
  train_cmd->add_flag("--head-only", train_args.head_only, "Replace the head and train it on a frozen backbone");

  AttackArgs attack_args;
  auto* attack_cmd = app.add_subcommand("attack", "Clean vs PGD accuracy, ranked");
  add_common(attack_cmd, attack_args.common);
  attack_cmd->add_option("--model", attack_args.models, "Weight file(s), repeatable or comma-separated");
  attack_cmd->add_option("--eps", attack_args.eps, "PGD radius, e.g. 4/255");
  attack_cmd->add_option("--step", attack_args.step, "PGD step size");
  attack_cmd->add_option("--iters", attack_args.iters, "PGD iterations");
  attack_cmd->add_flag("--random-start", attack_args.random_start, "Seeded uniform start inside the ball");
  attack_cmd->add_option("--split", attack_args.split, "train | val | test");

  AttributeArgs attr_args;
  auto* attr_cmd = app.add_subcommand("attribute", "Write attribution heatmaps");
  add_common(attr_cmd, attr_args.common);
  attr_cmd->add_option("--model", attr_args.model, "Weight file");
  attr_cmd->add_option("--images", attr_args.images, "Image ids, comma-separated");
  attr_cmd->add_option("--target", attr_args.target, "'predicted' or a class index");
  add_map_options(attr_cmd, attr_args.map);

  CoverageArgs cov_args;
  auto* cov_cmd = app.add_subcommand("coverage", "Point coverage table over models x methods x percentiles");
  add_common(cov_cmd, cov_args.common);
  cov_cmd->add_option("--model", cov_args.models, "Weight file(s)");
  cov_cmd->add_option("--percentiles", cov_args.percentiles, "Comma-separated percentiles");
  cov_cmd->add_option("--annotations", cov_args.annotations, "Annotation file (JSON)");
  cov_cmd->add_option("--target", cov_args.target, "Class index whose logit is attributed");
  cov_cmd->add_option("--split", cov_args.split, "train | val | test");
  add_map_options(cov_cmd, cov_args.map);

  std::vector<std::string> argv_store{"fraclens"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& s : argv_store) argv.push_back(s.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    if (*synth_cmd) return cmd_synth(synth, out);
    if (*train_cmd) return cmd_train(train_args, *train_cmd, out);
    if (*attack_cmd) return cmd_attack(attack_args, *attack_cmd, out);
    if (*attr_cmd) return cmd_attribute(attr_args, *attr_cmd, out);
    if (*cov_cmd) return cmd_coverage(cov_args, *cov_cmd, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace fraclens::cli
