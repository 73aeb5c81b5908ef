#include "skupatch/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <vector>

#include "skupatch/errors.hpp"

namespace skupatch {
namespace {

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::size_t parse_size(const std::string& v) {
  std::size_t out = 0;
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("expected a non-negative integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& v) {
  std::istringstream is(v);
  is.imbue(std::locale::classic());
  double out = 0;
  is >> out;
  if (is.fail() || !is.eof()) throw ConfigError("expected a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw ConfigError("expected a boolean, got '" + v + "'");
}

PatchFusion parse_fusion(const std::string& v) {
  if (v == "attention") return PatchFusion::kAttention;
  if (v == "add") return PatchFusion::kAdd;
  if (v == "momentum") return PatchFusion::kMomentum;
  throw ConfigError("patch_fusion must be attention, add or momentum, got '" + v + "'");
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::setprecision(17) << v;
  return os.str();
}

template <class Owner, class M>
Field size_field(const std::string& key, Owner RunConfig::*owner, M Owner::*member) {
  return {key, [=](RunConfig& c, const std::string& v) { (c.*owner).*member = parse_size(v); },
          [=](const RunConfig& c) { return std::to_string((c.*owner).*member); }};
}

template <class Owner>
Field double_field(const std::string& key, Owner RunConfig::*owner, double Owner::*member) {
  return {key, [=](RunConfig& c, const std::string& v) { (c.*owner).*member = parse_double(v); },
          [=](const RunConfig& c) { return fmt_double((c.*owner).*member); }};
}

Field bool_field(const std::string& key, bool ModelConfig::*member) {
  return {key, [=](RunConfig& c, const std::string& v) { c.model.*member = parse_bool(v); },
          [=](const RunConfig& c) { return std::string(c.model.*member ? "1" : "0"); }};
}

const std::vector<Field>& model_fields() {
  static const std::vector<Field> fields = [] {
    using M = ModelConfig;
    auto m = &RunConfig::model;
    std::vector<Field> f;
    // image_size and patch_size are shared with the data section.
    f.push_back({"image_size",
                 [](RunConfig& c, const std::string& v) { c.model.image_size = c.data.image_size = parse_size(v); },
                 [](const RunConfig& c) { return std::to_string(c.model.image_size); }});
    f.push_back(size_field("stride", m, &M::stride));
    f.push_back({"patch_size",
                 [](RunConfig& c, const std::string& v) { c.model.patch_size = c.data.patch_size = parse_size(v); },
                 [](const RunConfig& c) { return std::to_string(c.model.patch_size); }});
    f.push_back(size_field("patch_stride", m, &M::patch_stride));
    f.push_back(size_field("width", m, &M::width));
    f.push_back(size_field("heads", m, &M::heads));
    f.push_back(size_field("layers", m, &M::layers));
    f.push_back(size_field("queries", m, &M::queries));
    f.push_back(size_field("window", m, &M::window));
    f.push_back(size_field("points", m, &M::points));
    f.push_back(size_field("ffn_hidden", m, &M::ffn_hidden));
    f.push_back(size_field("head_layers", m, &M::head_layers));
    f.push_back(size_field("mask_grid", m, &M::mask_grid));
    f.push_back(size_field("mask_coeffs", m, &M::mask_coeffs));
    f.push_back(double_field("mask_output_scale", m, &M::mask_output_scale));
    f.push_back(double_field("weight_class", m, &M::weight_class));
    f.push_back(double_field("weight_l1", m, &M::weight_l1));
    f.push_back(double_field("weight_giou", m, &M::weight_giou));
    f.push_back(double_field("weight_mask", m, &M::weight_mask));
    f.push_back(double_field("no_object_weight", m, &M::no_object_weight));
    f.push_back(double_field("smooth_l1_beta", m, &M::smooth_l1_beta));
    f.push_back(bool_field("fuse", &M::fuse));
    f.push_back(bool_field("decoder_cross_attention", &M::decoder_cross_attention));
    f.push_back(bool_field("deformable", &M::deformable));
    f.push_back(bool_field("deformable_dot_logits", &M::deformable_dot_logits));
    f.push_back(bool_field("box_from_reference", &M::box_from_reference));
    f.push_back(bool_field("encoder_patch_attention", &M::encoder_patch_attention));
    f.push_back({"patch_fusion",
                 [](RunConfig& c, const std::string& v) { c.model.patch_fusion = parse_fusion(v); },
                 [](const RunConfig& c) { return to_string(c.model.patch_fusion); }});
    f.push_back(double_field("patch_momentum", m, &M::patch_momentum));
    f.push_back(bool_field("aux_loss", &M::aux_loss));
    return f;
  }();
  return fields;
}

const std::vector<Field>& data_fields() {
  static const std::vector<Field> fields = [] {
    using D = DataConfig;
    auto d = &RunConfig::data;
    std::vector<Field> f;
    f.push_back(size_field("num_seen_skus", d, &D::num_seen_skus));
    f.push_back(size_field("num_unseen_skus", d, &D::num_unseen_skus));
    f.push_back(size_field("train_scenes", d, &D::train_scenes));
    f.push_back(size_field("test_scenes", d, &D::test_scenes));
    f.push_back(size_field("patches_per_sku", d, &D::patches_per_sku));
    f.push_back(double_field("hard_fraction", d, &D::hard_fraction));
    f.push_back(size_field("skus_per_scene_min", d, &D::skus_per_scene_min));
    f.push_back(size_field("skus_per_scene_max", d, &D::skus_per_scene_max));
    f.push_back(size_field("sku_size_min", d, &D::sku_size_min));
    f.push_back(size_field("sku_size_max", d, &D::sku_size_max));
    f.push_back(size_field("easy_instances_min", d, &D::easy_instances_min));
    f.push_back(size_field("easy_instances_max", d, &D::easy_instances_max));
    f.push_back(size_field("hard_instances_min", d, &D::hard_instances_min));
    f.push_back(size_field("hard_instances_max", d, &D::hard_instances_max));
    f.push_back(double_field("min_visibility", d, &D::min_visibility));
    return f;
  }();
  return fields;
}

const std::vector<Field>& train_fields() {
  static const std::vector<Field> fields = [] {
    using T = TrainConfig;
    auto t = &RunConfig::train;
    std::vector<Field> f;
    f.push_back(double_field("lr", t, &T::lr));
    f.push_back(double_field("beta1", t, &T::beta1));
    f.push_back(double_field("beta2", t, &T::beta2));
    f.push_back(double_field("adam_eps", t, &T::adam_eps));
    f.push_back(double_field("weight_decay", t, &T::weight_decay));
    f.push_back(size_field("steps", t, &T::steps));
    f.push_back(size_field("batch_size", t, &T::batch_size));
    f.push_back(double_field("grad_clip", t, &T::grad_clip));
    f.push_back(size_field("warmup_steps", t, &T::warmup_steps));
    f.push_back(size_field("max_train_patches", t, &T::max_train_patches));
    f.push_back(double_field("negative_query_prob", t, &T::negative_query_prob));
    f.push_back(size_field("log_every", t, &T::log_every));
    f.push_back(double_field("score_threshold", t, &T::score_threshold));
    return f;
  }();
  return fields;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

const Field* find_field(const std::string& key) {
  for (const auto* table : {&model_fields(), &data_fields(), &train_fields()}) {
    for (const auto& f : *table) {
      if (f.key == key) return &f;
    }
  }
  return nullptr;
}

std::string dump(const std::vector<Field>& fields, const RunConfig& c) {
  std::string out;
  for (const auto& f : fields) out += f.key + " = " + f.get(c) + "\n";
  return out;
}

}  // namespace

std::string to_string(PatchFusion fusion) {
  switch (fusion) {
    case PatchFusion::kAttention: return "attention";
    case PatchFusion::kAdd: return "add";
    case PatchFusion::kMomentum: return "momentum";
  }
  return "attention";
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (stride == 0 || patch_stride == 0) fail("strides must be positive");
  if (image_size == 0 || image_size % stride != 0) fail("image_size must be a positive multiple of stride");
  if (patch_size == 0 || patch_size % patch_stride != 0) fail("patch_size must be a positive multiple of patch_stride");
  if (layers == 0) fail("layers must be at least 1");
  const std::size_t halvings = std::size_t{1} << (layers - 1);
  if (image_grid() % halvings != 0) {
    fail("image token grid " + std::to_string(image_grid()) + " cannot be halved " +
         std::to_string(layers - 1) + " times");
  }
  if (patch_grid() % halvings != 0) {
    fail("patch token grid " + std::to_string(patch_grid()) + " cannot be halved " +
         std::to_string(layers - 1) + " times");
  }
  if (heads == 0 || width % heads != 0) fail("width must be divisible by heads");
  if (width < 2 || width % 2 != 0) fail("width must be even");
  if (queries == 0) fail("queries must be at least 1");
  if (points == 0) fail("points must be at least 1");
  if (window == 0) fail("window must be at least 1");
  if (head_layers == 0) fail("head_layers must be at least 1");
  if (mask_grid == 0 || mask_coeffs == 0 || mask_coeffs > mask_grid * mask_grid) {
    fail("mask_coeffs must be in [1, mask_grid^2]");
  }
  if (no_object_weight < 0 || weight_class < 0 || weight_l1 < 0 || weight_giou < 0 || weight_mask < 0) {
    fail("loss weights must be non-negative");
  }
  if (smooth_l1_beta <= 0) fail("smooth_l1_beta must be positive");
  if (patch_momentum < 0 || patch_momentum > 1) fail("patch_momentum must be in [0, 1]");
}

void DataConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (image_size < 16) fail("image_size must be at least 16");
  if (patch_size < 4) fail("patch_size must be at least 4");
  if (num_seen_skus == 0 && train_scenes > 0) fail("training scenes need seen skus");
  if (num_unseen_skus == 0 && test_scenes > 0) fail("test scenes need unseen skus");
  if (patches_per_sku == 0 || patches_per_sku > 10) fail("patches_per_sku must be in [1, 10]");
  if (hard_fraction < 0 || hard_fraction > 1) fail("hard_fraction must be in [0, 1]");
  if (skus_per_scene_min == 0 || skus_per_scene_min > skus_per_scene_max) fail("bad skus_per_scene range");
  if (sku_size_min < 4 || sku_size_min > sku_size_max) fail("bad sku_size range");
  if (sku_size_max > image_size) fail("sku_size_max exceeds image_size");
  if (easy_instances_min == 0 || easy_instances_min > easy_instances_max) fail("bad easy instance range");
  if (hard_instances_min == 0 || hard_instances_min > hard_instances_max) fail("bad hard instance range");
  if (min_visibility <= 0 || min_visibility > 1) fail("min_visibility must be in (0, 1]");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (lr < 0) fail("lr must be non-negative");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) fail("betas must be in [0, 1)");
  if (adam_eps <= 0) fail("adam_eps must be positive");
  if (weight_decay < 0) fail("weight_decay must be non-negative");
  if (batch_size == 0) fail("batch_size must be at least 1");
  if (grad_clip < 0) fail("grad_clip must be non-negative");
  if (max_train_patches == 0 || max_train_patches > 10) fail("max_train_patches must be in [1, 10]");
  if (negative_query_prob < 0 || negative_query_prob > 1) fail("negative_query_prob must be in [0, 1]");
  if (log_every == 0) fail("log_every must be at least 1");
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const Field* f = find_field(key);
    if (!f) throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    try {
      f->set(base, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + " (" + key + "): " + e.what());
    }
  }
  if (base.model.image_size != base.data.image_size || base.model.patch_size != base.data.patch_size) {
    throw ConfigError("model and data image/patch sizes disagree");
  }
  return base;
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InputError("cannot open config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::string serialize(const ModelConfig& config) {
  RunConfig c;
  c.model = config;
  return dump(model_fields(), c);
}

std::string serialize(const DataConfig& config) {
  RunConfig c;
  c.data = config;
  c.model.image_size = config.image_size;
  c.model.patch_size = config.patch_size;
  std::string out = "image_size = " + std::to_string(config.image_size) + "\n";
  out += "patch_size = " + std::to_string(config.patch_size) + "\n";
  return out + dump(data_fields(), c);
}

std::string serialize(const TrainConfig& config) {
  RunConfig c;
  c.train = config;
  return dump(train_fields(), c);
}

std::string serialize(const RunConfig& config) {
  return dump(model_fields(), config) + dump(data_fields(), config) + dump(train_fields(), config);
}

ModelConfig parse_model_config(const std::string& text) {
  RunConfig base;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string key = eq == std::string::npos ? line : trim(line.substr(0, eq));
    bool known = false;
    for (const auto& f : model_fields()) known = known || f.key == key;
    if (!known) throw InputError("unknown model config key '" + key + "'");
  }
  return parse_config(text, base).model;
}

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace skupatch
