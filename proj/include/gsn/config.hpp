#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gsn/chain.hpp"
#include "gsn/corruption.hpp"
#include "gsn/error.hpp"
#include "gsn/io.hpp"
#include "gsn/network.hpp"
#include "gsn/recon.hpp"
#include "gsn/trainer.hpp"

namespace gsn {

using Json = nlohmann::json;

/// Accepts "salt-pepper:R", "gaussian:S", "uniform:E" and "mask:K".
inline Corruptor parse_corruptor(const std::string& spec) {
  const auto colon = spec.find(':');
  if (colon != std::string::npos) {
    const std::string head = spec.substr(0, colon), tail = spec.substr(colon + 1);
    try {
      if (head == "salt-pepper") return SaltPepper{std::stod(tail)};
      if (head == "gaussian") return AdditiveGaussian{std::stod(tail)};
      if (head == "uniform") return LocalUniform{std::stod(tail)};
      if (head == "mask") return SubsetMask{static_cast<std::size_t>(std::stoul(tail))};
    } catch (const std::logic_error&) {
    }
  }
  throw ParameterError("corruption spec '" + spec + "' not understood");
}

inline HeadKind parse_head(const std::string& s) {
  if (s == "bernoulli") return HeadKind::Bernoulli;
  if (s == "gaussian") return HeadKind::Gaussian;
  throw ParameterError("head '" + s + "' not understood");
}

/// Clamped coordinates from "right-half" (of a width x height image) or a
/// comma-separated index list. Values are filled in by the caller.
inline std::vector<std::size_t> parse_clamp_indices(const std::string& spec, std::size_t width,
                                                    std::size_t height) {
  std::vector<std::size_t> idx;
  if (spec == "right-half") {
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = width / 2; x < width; ++x) idx.push_back(y * width + x);
    return idx;
  }
  std::istringstream is(spec);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    try {
      std::size_t used = 0;
      idx.push_back(static_cast<std::size_t>(std::stoul(tok, &used)));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::logic_error&) {
      throw ParameterError("clamp spec '" + spec + "' not understood");
    }
  }
  if (idx.empty()) throw ParameterError("clamp spec '" + spec + "' is empty");
  return idx;
}

/// Everything a CLI run needs, stored as one flat JSON object.
struct RunConfig {
  std::string dataset = "mnist";  // mnist | discrete | continuous
  std::string idx_path;
  std::string test_idx_path;
  std::size_t n_train = 10000;
  std::size_t n_valid = 1000;
  std::size_t n_test = 1000;
  bool downsample = true;
  std::optional<double> binarize_threshold = 0.5;
  Vector synth_spec;
  std::size_t synth_n = 5000;

  std::vector<std::size_t> hidden{400};
  std::string head = "bernoulli";
  std::string corruption = "salt-pepper:0.5";
  double hidden_sigma_in = 0.0;
  double hidden_sigma_out = 0.0;

  TrainConfig train;

  std::size_t burn_in = 1000;
  std::size_t n_samples = 100;
  std::size_t thin = 1;
  std::string clamp;

  std::string output_dir = "out";
  std::uint64_t seed = 1;

  Json to_json() const {
    Json j;
    j["dataset"] = dataset;
    j["idx_path"] = idx_path;
    j["test_idx_path"] = test_idx_path;
    j["n_train"] = n_train;
    j["n_valid"] = n_valid;
    j["n_test"] = n_test;
    j["downsample"] = downsample;
    j["binarize_threshold"] = binarize_threshold ? Json(*binarize_threshold) : Json(nullptr);
    j["synth_spec"] = synth_spec;
    j["synth_n"] = synth_n;
    j["hidden"] = hidden;
    j["head"] = head;
    j["corruption"] = corruption;
    j["hidden_sigma_in"] = hidden_sigma_in;
    j["hidden_sigma_out"] = hidden_sigma_out;
    j["epochs"] = train.epochs;
    j["lr"] = train.lr;
    j["momentum"] = train.momentum;
    j["lr_decay"] = train.lr_decay;
    j["minibatch"] = train.minibatch;
    j["walkback"] = train.walkback.to_string();
    j["collect_intermediate"] = train.collect_intermediate;
    j["h0_policy"] = train.h0_policy == H0Policy::Zero ? "zero" : "persist";
    j["learn_alpha"] = train.learn_alpha;
    j["k_max"] = train.k_max;
    j["per_unit_loss"] = train.per_unit_loss;
    j["burn_in"] = burn_in;
    j["n_samples"] = n_samples;
    j["thin"] = thin;
    j["clamp"] = clamp;
    j["output_dir"] = output_dir;
    j["seed"] = seed;
    return j;
  }

  /// Missing keys keep their defaults; unknown keys are rejected.
  static RunConfig from_json(const Json& j) {
    if (!j.is_object()) throw ParameterError("config: top level must be a JSON object");
    RunConfig c;
    const std::set<std::string> known = [&] {
      std::set<std::string> k;
      const Json defaults = c.to_json();
      for (const auto& [key, _] : defaults.items()) k.insert(key);
      return k;
    }();
    for (const auto& [key, _] : j.items())
      if (!known.contains(key)) throw ParameterError("config: unknown key '" + key + "'");
    try {
      auto get = [&](const char* key, auto& dst) {
        if (j.contains(key)) j.at(key).get_to(dst);
      };
      get("dataset", c.dataset);
      get("idx_path", c.idx_path);
      get("test_idx_path", c.test_idx_path);
      get("n_train", c.n_train);
      get("n_valid", c.n_valid);
      get("n_test", c.n_test);
      get("downsample", c.downsample);
      if (j.contains("binarize_threshold")) {
        if (j["binarize_threshold"].is_null()) c.binarize_threshold.reset();
        else c.binarize_threshold = j["binarize_threshold"].get<double>();
      }
      get("synth_spec", c.synth_spec);
      get("synth_n", c.synth_n);
      get("hidden", c.hidden);
      get("head", c.head);
      get("corruption", c.corruption);
      get("hidden_sigma_in", c.hidden_sigma_in);
      get("hidden_sigma_out", c.hidden_sigma_out);
      get("epochs", c.train.epochs);
      get("lr", c.train.lr);
      get("momentum", c.train.momentum);
      get("lr_decay", c.train.lr_decay);
      get("minibatch", c.train.minibatch);
      if (j.contains("walkback")) c.train.walkback = Walkback::parse(j["walkback"].get<std::string>());
      get("collect_intermediate", c.train.collect_intermediate);
      if (j.contains("h0_policy")) {
        const auto p = j["h0_policy"].get<std::string>();
        if (p == "zero") c.train.h0_policy = H0Policy::Zero;
        else if (p == "persist") c.train.h0_policy = H0Policy::Persist;
        else throw ParameterError("config: h0_policy '" + p + "' not understood");
      }
      get("learn_alpha", c.train.learn_alpha);
      get("k_max", c.train.k_max);
      get("per_unit_loss", c.train.per_unit_loss);
      get("burn_in", c.burn_in);
      get("n_samples", c.n_samples);
      get("thin", c.thin);
      get("clamp", c.clamp);
      get("output_dir", c.output_dir);
      get("seed", c.seed);
    } catch (const Json::exception& e) {
      throw ParameterError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
  }

  void validate() const {
    if (dataset != "mnist" && dataset != "discrete" && dataset != "continuous")
      throw ParameterError("config: dataset '" + dataset + "' not understood");
    if (hidden.empty()) throw ParameterError("config: at least one hidden layer is required");
    parse_head(head);
    parse_corruptor(corruption);
    check_noise_levels(hidden_sigma_in, hidden_sigma_out);
    train.validate();
    if (thin < 1) throw ParameterError("config: thin must be >= 1");
    if (dataset == "discrete" && synth_spec.empty())
      throw ParameterError("config: discrete dataset needs synth_spec");
  }

  /// Paths must exist when the dataset is actually loaded.
  void check_paths() const {
    if (dataset != "mnist") return;
    for (const auto& p : {idx_path, test_idx_path})
      if (!p.empty() && !std::filesystem::exists(p)) throw Error("config: path does not exist: " + p);
    if (idx_path.empty()) throw ParameterError("config: mnist dataset needs idx_path");
  }

  std::uint64_t hash() const { return fnv1a(to_json().dump()); }

  std::size_t image_side() const { return downsample ? 14 : 28; }

  /// Noise on every hidden layer except the first.
  std::vector<LayerNoise> layer_noise() const {
    std::vector<LayerNoise> n(hidden.size());
    for (std::size_t l = 1; l < n.size(); ++l) n[l] = {hidden_sigma_in, hidden_sigma_out};
    return n;
  }
};

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw FormatError("config " + path.string() + ": " + e.what());
  }
  return RunConfig::from_json(j);
}

// ---------------------------------------------------------------------------
// Model checkpoints (JSON; doubles round-trip exactly).

struct Checkpoint {
  GsnModel model;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  std::size_t epochs = 0;
};

inline Json checkpoint_json(const GsnModel& m, std::uint64_t seed, std::uint64_t config_hash,
                            std::size_t epochs) {
  Json j;
  j["format"] = "gsn-checkpoint-1";
  j["seed"] = seed;
  j["config_hash"] = hex64(config_hash);
  j["epochs"] = epochs;
  j["layer_sizes"] = m.layer_sizes();
  j["head"] = to_string(m.head());
  Json noise = Json::array();
  for (const auto& n : m.noise()) noise.push_back({n.sigma_in, n.sigma_out});
  j["noise"] = noise;
  const auto& p = m.params();
  Json w = Json::array();
  for (const auto& t : p.weights) w.push_back(t.storage());
  j["weights"] = w;
  j["biases"] = p.biases;
  j["log_sigma"] = p.log_sigma;
  j["log_alpha"] = p.alphas.log_alpha();
  return j;
}

inline Checkpoint checkpoint_from_json(const Json& j) {
  try {
    if (j.at("format") != "gsn-checkpoint-1") throw FormatError("checkpoint: unknown format");
    std::vector<LayerNoise> noise;
    for (const auto& n : j.at("noise")) noise.push_back({n.at(0).get<double>(), n.at(1).get<double>()});
    const auto log_alpha = j.at("log_alpha").get<Vector>();
    GsnModel m(j.at("layer_sizes").get<std::vector<std::size_t>>(), parse_head(j.at("head")), noise,
               log_alpha.size());
    auto& p = m.params();
    const auto& w = j.at("weights");
    if (w.size() != p.weights.size()) throw FormatError("checkpoint: wrong number of weight matrices");
    for (std::size_t l = 0; l < p.weights.size(); ++l)
      p.weights[l] = Tensor2(p.weights[l].rows(), p.weights[l].cols(), w[l].get<Vector>());
    auto biases = j.at("biases").get<std::vector<Vector>>();
    if (biases.size() != p.biases.size()) throw FormatError("checkpoint: wrong number of biases");
    for (std::size_t l = 0; l < biases.size(); ++l)
      if (biases[l].size() != p.biases[l].size()) throw FormatError("checkpoint: bias size mismatch");
    p.biases = std::move(biases);
    auto ls = j.at("log_sigma").get<Vector>();
    if (ls.size() != p.log_sigma.size()) throw FormatError("checkpoint: log_sigma size mismatch");
    p.log_sigma = std::move(ls);
    p.alphas = ScalingFactors(log_alpha);
    const std::uint64_t hash = std::stoull(j.at("config_hash").get<std::string>(), nullptr, 16);
    return {std::move(m), j.at("seed").get<std::uint64_t>(), hash, j.at("epochs").get<std::size_t>()};
  } catch (const Json::exception& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const std::filesystem::path& path, const GsnModel& m, std::uint64_t seed,
                            std::uint64_t config_hash, std::size_t epochs) {
  write_bytes(path, checkpoint_json(m, seed, config_hash, epochs).dump() + "\n");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw FormatError("checkpoint " + path.string() + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace gsn
