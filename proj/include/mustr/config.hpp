#pragma once

#include <map>
#include <string>

#include "mustr/model.hpp"

namespace mustr {

// Flat key=value config file ('#' comments, blank lines allowed).
struct KeyValueConfig {
  std::map<std::string, std::string> values;

  static KeyValueConfig load(const std::string& path);
  void save(const std::string& path) const;

  bool has(const std::string& key) const { return values.count(key) != 0; }
  std::string get_str(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  double get_double(const std::string& key, double fallback) const;
};

// Documented keys: image_h image_w patch_size embed_dim_enc embed_dim_dec
// enc_depth depth_L heads mlp_mult injection_variant injection_hidden_mult
// loss_space dropout_p conf_alpha
ModelConfig model_config_from(const KeyValueConfig& kv);
KeyValueConfig model_config_to(const ModelConfig& cfg);

InjectionVariant injection_variant_from(const std::string& name);
std::string injection_variant_name(InjectionVariant v);
LossSpace loss_space_from(const std::string& name);
std::string loss_space_name(LossSpace s);

}  // namespace mustr
