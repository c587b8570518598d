#include "mustr/config.hpp"

#include <fstream>
#include <sstream>

namespace mustr {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

KeyValueConfig KeyValueConfig::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open config file: " + path);
  KeyValueConfig kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw DataError(path + ":" + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(t.substr(0, eq));
    const std::string val = trim(t.substr(eq + 1));
    if (key.empty()) throw DataError(path + ":" + std::to_string(lineno) + ": empty key");
    kv.values[key] = val;
  }
  return kv;
}

void KeyValueConfig::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw DataError("cannot open config file for writing: " + path);
  for (const auto& [k, v] : values) f << k << " = " << v << "\n";
}

std::string KeyValueConfig::get_str(const std::string& key, const std::string& fallback) const {
  auto it = values.find(key);
  return it == values.end() ? fallback : it->second;
}

int KeyValueConfig::get_int(const std::string& key, int fallback) const {
  auto it = values.find(key);
  if (it == values.end()) return fallback;
  try {
    return std::stoi(it->second);
  } catch (const std::exception&) {
    throw DataError("config key '" + key + "': expected integer, got '" + it->second + "'");
  }
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  auto it = values.find(key);
  if (it == values.end()) return fallback;
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    throw DataError("config key '" + key + "': expected number, got '" + it->second + "'");
  }
}

InjectionVariant injection_variant_from(const std::string& name) {
  if (name == "mlp") return InjectionVariant::MLP;
  if (name == "linear") return InjectionVariant::Linear;
  if (name == "constant") return InjectionVariant::Constant;
  if (name == "none") return InjectionVariant::None;
  if (name == "from_layer_l") return InjectionVariant::FromLayerL;
  throw DataError("unknown injection_variant '" + name +
                  "' (expected mlp|linear|constant|none|from_layer_l)");
}

std::string injection_variant_name(InjectionVariant v) {
  switch (v) {
    case InjectionVariant::MLP: return "mlp";
    case InjectionVariant::Linear: return "linear";
    case InjectionVariant::Constant: return "constant";
    case InjectionVariant::None: return "none";
    case InjectionVariant::FromLayerL: return "from_layer_l";
  }
  return "mlp";
}

LossSpace loss_space_from(const std::string& name) {
  if (name == "log") return LossSpace::Log;
  if (name == "linear") return LossSpace::Linear;
  throw DataError("unknown loss_space '" + name + "' (expected log|linear)");
}

std::string loss_space_name(LossSpace s) {
  return s == LossSpace::Log ? "log" : "linear";
}

ModelConfig model_config_from(const KeyValueConfig& kv) {
  ModelConfig cfg;
  cfg.image_h = kv.get_int("image_h", cfg.image_h);
  cfg.image_w = kv.get_int("image_w", cfg.image_w);
  cfg.patch_size = kv.get_int("patch_size", cfg.patch_size);
  cfg.embed_dim_enc = kv.get_int("embed_dim_enc", cfg.embed_dim_enc);
  cfg.embed_dim_dec = kv.get_int("embed_dim_dec", cfg.embed_dim_dec);
  cfg.enc_depth = kv.get_int("enc_depth", cfg.enc_depth);
  cfg.depth_L = kv.get_int("depth_L", cfg.depth_L);
  cfg.heads = kv.get_int("heads", cfg.heads);
  cfg.mlp_mult = kv.get_int("mlp_mult", cfg.mlp_mult);
  cfg.injection_variant =
      injection_variant_from(kv.get_str("injection_variant", injection_variant_name(cfg.injection_variant)));
  cfg.injection_hidden_mult = kv.get_int("injection_hidden_mult", cfg.injection_hidden_mult);
  cfg.loss_space = loss_space_from(kv.get_str("loss_space", loss_space_name(cfg.loss_space)));
  cfg.dropout_p = kv.get_double("dropout_p", cfg.dropout_p);
  cfg.conf_alpha = kv.get_double("conf_alpha", cfg.conf_alpha);
  cfg.validate();
  return cfg;
}

KeyValueConfig model_config_to(const ModelConfig& cfg) {
  KeyValueConfig kv;
  kv.values["image_h"] = std::to_string(cfg.image_h);
  kv.values["image_w"] = std::to_string(cfg.image_w);
  kv.values["patch_size"] = std::to_string(cfg.patch_size);
  kv.values["embed_dim_enc"] = std::to_string(cfg.embed_dim_enc);
  kv.values["embed_dim_dec"] = std::to_string(cfg.embed_dim_dec);
  kv.values["enc_depth"] = std::to_string(cfg.enc_depth);
  kv.values["depth_L"] = std::to_string(cfg.depth_L);
  kv.values["heads"] = std::to_string(cfg.heads);
  kv.values["mlp_mult"] = std::to_string(cfg.mlp_mult);
  kv.values["injection_variant"] = injection_variant_name(cfg.injection_variant);
  kv.values["injection_hidden_mult"] = std::to_string(cfg.injection_hidden_mult);
  kv.values["loss_space"] = loss_space_name(cfg.loss_space);
  {
    std::ostringstream os;
    os << cfg.dropout_p;
    kv.values["dropout_p"] = os.str();
  }
  {
    std::ostringstream os;
    os << cfg.conf_alpha;
    kv.values["conf_alpha"] = os.str();
  }
  return kv;
}

}  // namespace mustr
