#include "config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace attrcenter::cli {

namespace {

using json = nlohmann::json;

// Reads typed fields out of one JSON object and rejects leftovers.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError(name_ + ": expected an object");
  }
  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!used_.count(key)) throw ConfigError(name_ + ": unknown key '" + key + "'");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(name_ + "." + key + ": wrong type");
    }
  }

  bool has(const std::string& key) {
    if (!j_.contains(key)) return false;
    used_.insert(key);
    return true;
  }
  const json& at(const std::string& key) const { return j_.at(key); }
  std::string path(const std::string& key) const { return name_ + "." + key; }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> used_;
};

lattice::AttributeSchema read_schema(Section& s) {
  std::string preset;
  s.get("preset", preset);
  if (s.has("categories")) {
    if (!preset.empty()) throw ConfigError("schema: give either preset or categories, not both");
    std::vector<lattice::AttributeCategory> cats;
    const auto& arr = s.at("categories");
    if (!arr.is_array()) throw ConfigError("schema.categories: expected an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      Section c(arr[i], "schema.categories[" + std::to_string(i) + "]");
      lattice::AttributeCategory cat;
      c.get("name", cat.name);
      c.get("states", cat.states);
      c.finish();
      cats.push_back(std::move(cat));
    }
    return lattice::AttributeSchema(std::move(cats));
  }
  if (preset.empty() || preset == "desk") return lattice::AttributeSchema::desk_preset();
  if (preset == "paper") return lattice::AttributeSchema::paper_preset();
  throw ConfigError("schema.preset: unknown preset '" + preset + "' (desk or paper)");
}

void read_train(Section& s, trainer::TrainConfig& t) {
  s.get("batch_size", t.batch_size);
  s.get("learning_rate", t.learning_rate);
  s.get("separation_lr", t.separation_lr);
  s.get("center_alpha", t.center_alpha);
  s.get("center_init_scale", t.center_init_scale);
  s.get("epochs", t.epochs);
  s.get("steps_per_epoch", t.steps_per_epoch);
  s.get("momentum", t.momentum);
  s.get("use_attributes", t.use_attributes);
  s.get("grad_clip", t.grad_clip);
  s.get("bn_momentum", t.bn_momentum);
  s.get("pretrain_identities", t.pretrain_identities);
  s.get("pretrain_max_epochs", t.pretrain_max_epochs);
  s.get("pretrain_patience", t.pretrain_patience);

  std::string opt;
  s.get("optimizer", opt);
  if (opt == "sgd") t.optimizer = trainer::Optimizer::Sgd;
  else if (opt == "momentum") t.optimizer = trainer::Optimizer::Momentum;
  else if (!opt.empty()) throw ConfigError("train.optimizer: expected sgd or momentum, got '" + opt + "'");

  std::string imp;
  s.get("impostors", imp);
  if (imp == "same_combination") t.impostors = trainer::ImpostorPolicy::SameCombination;
  else if (imp == "any_identity") t.impostors = trainer::ImpostorPolicy::AnyIdentity;
  else if (!imp.empty()) throw ConfigError("train.impostors: expected same_combination or any_identity");

  if (s.has("margins")) {
    Section m(s.at("margins"), s.path("margins"));
    m.get("margin_unit", t.margins.margin_unit);
    m.get("attribute_margin", t.margins.attribute_margin);
    m.get("identity_margin", t.margins.identity_margin);
    m.finish();
  }
  if (s.has("weights")) {
    Section w(s.at("weights"), s.path("weights"));
    w.get("attr", t.weights.attr);
    w.get("id", t.weights.id);
    w.get("cen", t.weights.cen);
    w.finish();
  }
  if (s.has("augment")) {
    Section a(s.at("augment"), s.path("augment"));
    a.get("enabled", t.augment.enabled);
    a.get("tps_grid", t.augment.tps.grid);
    a.get("tps_max_displacement", t.augment.tps.max_displacement);
    a.get("max_scale", t.augment.max_scale);
    a.get("flip_probability", t.augment.flip_probability);
    a.finish();
  }
}

void read_eval(Section& s, eval::ProtocolConfig& p, std::vector<std::uint64_t>& seeds) {
  s.get("identities", p.identities);
  s.get("folds", p.folds);
  s.get("train_ratio", p.train_ratio);
  s.get("gallery_factor", p.gallery_factor);
  s.get("ks", p.ks);
  s.get("attr_noise", p.attr_noise);
  s.get("ablation_seeds", seeds);
  if (seeds.empty()) throw ConfigError("eval.ablation_seeds: need at least one seed");
}

}  // namespace

void AppConfig::set_seed(std::uint64_t seed) {
  const std::uint64_t shift = seed - train.seed;
  for (auto& s : ablation_seeds) s += shift;
  train.seed = seed;
  protocol.seed = seed;
}

synth::RenderConfig AppConfig::render() const { return synth_unseen_style ? protocol.unseen_style : protocol.render; }

AppConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  AppConfig cfg;
  Section root(j, "config");

  std::uint64_t seed = cfg.train.seed;
  root.get("seed", seed);

  if (root.has("schema")) {
    Section s(root.at("schema"), "schema");
    cfg.schema = read_schema(s);
    s.finish();
  }
  std::size_t h = cfg.train.image_height, w = cfg.train.image_width;
  if (root.has("encoder")) {
    Section e(root.at("encoder"), "encoder");
    e.get("embedding_dim", cfg.train.embedding_dim);
    e.get("height", h);
    e.get("width", w);
    e.get("batch_norm", cfg.train.encoder_batch_norm);
    e.finish();
  }
  cfg.train.image_height = h;
  cfg.train.image_width = w;
  if (root.has("train")) {
    Section t(root.at("train"), "train");
    read_train(t, cfg.train);
    t.finish();
  }
  if (root.has("eval")) {
    Section e(root.at("eval"), "eval");
    read_eval(e, cfg.protocol, cfg.ablation_seeds);
    e.finish();
  }
  std::string style = "a";
  if (root.has("synth")) {
    Section s(root.at("synth"), "synth");
    s.get("identities", cfg.synth_identities);
    s.get("style", style);
    s.finish();
  }
  root.finish();
  if (style != "a" && style != "b") throw ConfigError("synth.style: expected a or b, got '" + style + "'");
  cfg.synth_unseen_style = style == "b";

  cfg.protocol.render = synth::RenderConfig::style_a(h, w);
  cfg.protocol.unseen_style = synth::RenderConfig::style_b(h, w);
  cfg.train.seed = seed;
  cfg.protocol.seed = seed;
  try {
    cfg.train.validate();
    cfg.protocol.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

AppConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace attrcenter::cli
