#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gsn/gsn.hpp"

#ifndef GSN_DATA_DIR
#define GSN_DATA_DIR "data"
#endif

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> epochs;
  std::optional<std::string> walkback;
  std::optional<std::string> clamp;
  std::optional<std::size_t> samples;
  std::optional<std::size_t> burnin;
  std::string model;
  std::string samples_file;
};

gsn::RunConfig resolve(const Options& o) {
  gsn::RunConfig c = o.config.empty() ? gsn::RunConfig{} : gsn::load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.out) c.output_dir = *o.out;
  if (o.epochs) c.train.epochs = *o.epochs;
  if (o.walkback) c.train.walkback = gsn::Walkback::parse(*o.walkback);
  if (o.clamp) c.clamp = *o.clamp;
  if (o.samples) c.n_samples = *o.samples;
  if (o.burnin) c.burn_in = *o.burnin;
  if (c.dataset == "mnist") {
    if (c.idx_path.empty()) c.idx_path = std::string(GSN_DATA_DIR) + "/train-10k-images-idx3-ubyte";
    if (c.test_idx_path.empty()) c.test_idx_path = std::string(GSN_DATA_DIR) + "/t10k-images-idx3-ubyte";
  }
  c.validate();
  return c;
}

struct Dataset {
  gsn::Tensor2 train;
  gsn::Tensor2 valid;
  gsn::Tensor2 test;
  std::size_t side = 0;  // image side length, 0 when not an image set
};

gsn::Tensor2 prepare_images(const gsn::RunConfig& c, gsn::Tensor2 m) {
  if (c.downsample) m = gsn::downsample2x2(m, 28, 28);
  if (c.binarize_threshold) m = gsn::binarize(std::move(m), *c.binarize_threshold);
  return m;
}

gsn::Tensor2 one_hot(const gsn::Tensor2& idx, std::size_t n) {
  gsn::Tensor2 out(idx.rows(), n);
  for (std::size_t r = 0; r < idx.rows(); ++r) out(r, static_cast<std::size_t>(idx(r, 0))) = 1.0;
  return out;
}

Dataset load_dataset(const gsn::RunConfig& c) {
  c.check_paths();
  Dataset d;
  if (c.dataset == "mnist") {
    d.train = prepare_images(c, gsn::head_rows(gsn::load_idx(c.idx_path), c.n_train));
    if (!c.test_idx_path.empty()) {
      const gsn::Tensor2 t = gsn::load_idx(c.test_idx_path);
      const std::size_t nv = std::min(c.n_valid, t.rows());
      const std::size_t nt = std::min(c.n_test, t.rows() - nv);
      d.valid = prepare_images(c, gsn::slice_rows(t, 0, nv));
      d.test = prepare_images(c, gsn::slice_rows(t, nv, nv + nt));
    }
    d.side = c.image_side();
  } else if (c.dataset == "discrete") {
    const std::size_t n = c.synth_spec.size();
    d.train = one_hot(gsn::synth_discrete(c.synth_spec, c.synth_n, c.seed), n);
    d.valid = one_hot(gsn::synth_discrete(c.synth_spec, c.n_valid, c.seed + 1), n);
    d.test = one_hot(gsn::synth_discrete(c.synth_spec, c.n_test, c.seed + 2), n);
  } else {
    d.train = gsn::synth_continuous(c.synth_n, c.seed);
    d.valid = gsn::synth_continuous(c.n_valid, c.seed + 1);
    d.test = gsn::synth_continuous(c.n_test, c.seed + 2);
  }
  return d;
}

/// Independent streams for initialization, training and sampling.
struct Streams {
  gsn::RngStream init, train, chain;
  explicit Streams(std::uint64_t seed) {
    gsn::RngStream root(seed);
    auto s = root.fork(3);
    init = s[0];
    train = s[1];
    chain = s[2];
  }
};

void write_manifest(const gsn::RunConfig& c, const std::string& command,
                    const std::vector<std::string>& files) {
  const fs::path path = fs::path(c.output_dir) / "manifest.json";
  gsn::Json m = gsn::Json::object();
  if (fs::exists(path)) {
    try {
      m = gsn::Json::parse(std::ifstream(path));
    } catch (const gsn::Json::exception&) {
      m = gsn::Json::object();
    }
  }
  m[command] = {{"seed", c.seed}, {"config_hash", gsn::hex64(c.hash())}, {"files", files}};
  gsn::write_bytes(path, m.dump(2) + "\n");
}

void write_config(const gsn::RunConfig& c) {
  gsn::write_bytes(fs::path(c.output_dir) / "config.json", c.to_json().dump(2) + "\n");
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

gsn::Checkpoint load_model(const Options& o, const gsn::RunConfig& c) {
  const fs::path p = o.model.empty() ? fs::path(c.output_dir) / "model.json" : fs::path(o.model);
  return gsn::load_checkpoint(p);
}

int cmd_train(const Options& o) {
  const gsn::RunConfig c = resolve(o);
  const Dataset d = load_dataset(c);
  fs::create_directories(c.output_dir);
  Streams rng(c.seed);
  std::vector<std::size_t> sizes{d.train.cols()};
  sizes.insert(sizes.end(), c.hidden.begin(), c.hidden.end());
  gsn::GsnModel model = gsn::GsnModel::initialized(sizes, gsn::parse_head(c.head), c.layer_noise(),
                                                   c.train.alpha_steps(), rng.init);
  gsn::Trainer trainer(model, gsn::parse_corruptor(c.corruption), c.train);
  std::string csv = "# seed=" + std::to_string(c.seed) + " config_hash=" + gsn::hex64(c.hash()) + "\n";
  csv += "epoch,mean_nll,lr\n";
  for (std::size_t e = 0; e < c.train.epochs; ++e) {
    const gsn::EpochReport rep = trainer.train_epoch(d.train, rng.train);
    csv += std::to_string(rep.epoch) + "," + format_double(rep.mean_nll) + "," + format_double(rep.lr_used) + "\n";
    std::cout << "epoch " << rep.epoch << " mean_nll " << rep.mean_nll << " lr " << rep.lr_used << std::endl;
  }
  gsn::write_bytes(fs::path(c.output_dir) / "metrics.csv", csv);
  gsn::save_checkpoint(fs::path(c.output_dir) / "model.json", model, c.seed, c.hash(), c.train.epochs);
  write_config(c);
  write_manifest(c, "train", {"metrics.csv", "model.json", "config.json"});
  return 0;
}

int cmd_sample(const Options& o) {
  const gsn::RunConfig c = resolve(o);
  const gsn::Checkpoint ck = load_model(o, c);
  fs::create_directories(c.output_dir);
  Streams rng(c.seed);
  const gsn::ChainRun run{c.burn_in, c.n_samples, c.thin, std::nullopt, rng.chain()};
  const gsn::ChainSamples s = gsn::run_chain(ck.model, gsn::parse_corruptor(c.corruption), run);
  const fs::path out(c.output_dir);
  gsn::write_matrix(out / "samples.bin", {s.samples, c.seed, c.hash()});
  gsn::write_matrix(out / "means.bin", {s.means, c.seed, c.hash()});
  std::vector<std::string> files{"samples.bin", "means.bin"};
  const std::size_t side = c.dataset == "mnist" ? c.image_side() : 0;
  if (side && s.samples.rows() > 0 && s.samples.cols() == side * side) {
    gsn::write_pgm(s.samples, side, side, out / "samples.pgm");
    gsn::write_pgm(s.means, side, side, out / "means.pgm");
    files.insert(files.end(), {"samples.pgm", "means.pgm"});
  }
  write_manifest(c, "sample", files);
  std::cout << "wrote " << s.samples.rows() << " samples to " << (out / "samples.bin").string() << "\n";
  return 0;
}

int cmd_inpaint(const Options& o) {
  gsn::RunConfig c = resolve(o);
  if (c.clamp.empty()) c.clamp = "right-half";
  if (c.dataset != "mnist") throw gsn::UnsupportedError("inpaint needs an image dataset");
  const gsn::Checkpoint ck = load_model(o, c);
  const Dataset d = load_dataset(c);
  if (d.test.rows() == 0) throw gsn::ParameterError("inpaint needs a test set");
  fs::create_directories(c.output_dir);
  const std::size_t side = d.side;
  const auto idx = gsn::parse_clamp_indices(c.clamp, side, side);
  const std::size_t digits = std::min<std::size_t>(10, d.test.rows());
  Streams rng(c.seed);
  const gsn::Corruptor corruptor = gsn::parse_corruptor(c.corruption);
  gsn::Tensor2 all(0, d.test.cols()), strip(0, d.test.cols());
  for (std::size_t i = 0; i < digits; ++i) {
    gsn::Clamp clamp{idx, {}};
    for (std::size_t k : idx) {
      if (k >= d.test.cols()) throw gsn::RangeError("clamp index " + std::to_string(k) + " out of range");
      clamp.values.push_back(d.test(i, k));
    }
    const gsn::ChainRun run{c.burn_in, c.n_samples, c.thin, clamp, rng.chain()};
    const gsn::ChainSamples s = gsn::run_clamped_chain(ck.model, corruptor, run);
    strip.append_row(d.test.row(i));
    for (std::size_t r = 0; r < s.samples.rows(); ++r) {
      all.append_row(s.samples.row(r));
      strip.append_row(s.samples.row(r));
    }
  }
  const fs::path out(c.output_dir);
  gsn::write_matrix(out / "inpaint.bin", {all, c.seed, c.hash()});
  gsn::write_pgm(strip, side, side, out / "inpaint.pgm", c.n_samples + 1);
  write_manifest(c, "inpaint", {"inpaint.bin", "inpaint.pgm"});
  std::cout << "inpainted " << digits << " digits, " << c.n_samples << " samples each\n";
  return 0;
}

int cmd_eval(const Options& o) {
  const gsn::RunConfig c = resolve(o);
  const fs::path file = o.samples_file.empty() ? fs::path(c.output_dir) / "means.bin" : fs::path(o.samples_file);
  const gsn::MatrixFile centers = gsn::read_matrix(file);
  const Dataset d = load_dataset(c);
  if (d.valid.rows() == 0 || d.test.rows() == 0) throw gsn::ParameterError("eval needs validation and test sets");
  const gsn::Vector grid = gsn::default_sigma_grid();
  const gsn::SigmaSelection sel = gsn::crossval_sigma(centers.matrix, d.valid, grid);
  const gsn::LogLik ll = gsn::loglik(gsn::ParzenModel(centers.matrix, sel.sigma), d.test);
  fs::create_directories(c.output_dir);
  gsn::Json j{{"sigma", sel.sigma},         {"mean_ll", ll.mean},
              {"std_err", ll.std_err},      {"n_centers", centers.matrix.rows()},
              {"n_test", d.test.rows()},    {"seed", c.seed},
              {"config_hash", gsn::hex64(c.hash())}};
  gsn::write_bytes(fs::path(c.output_dir) / "eval.json", j.dump(2) + "\n");
  write_manifest(c, "eval", {"eval.json"});
  std::printf("sigma %.4g  mean_ll %.2f +- %.2f\n", sel.sigma, ll.mean, ll.std_err);
  return 0;
}

int cmd_verify(const Options& o) {
  const std::uint64_t seed = o.seed.value_or(1);
  bool ok = true;
  std::printf("%-40s %-6s %8s  %s\n", "check", "result", "seconds", "detail");
  for (const gsn::CheckResult& r : gsn::run_oracle_suite(seed)) {
    ok = ok && r.passed;
    std::printf("%-40s %-6s %8.3f  %s\n", r.name.c_str(), r.passed ? "PASS" : "FAIL", r.seconds,
                r.detail.c_str());
  }
  return ok ? 0 : 1;
}

int cmd_synth(const Options& o) {
  const gsn::RunConfig c = resolve(o);
  if (c.dataset == "mnist") throw gsn::ParameterError("synth needs dataset 'discrete' or 'continuous'");
  fs::create_directories(c.output_dir);
  const gsn::Tensor2 data = c.dataset == "discrete" ? gsn::synth_discrete(c.synth_spec, c.synth_n, c.seed)
                                                    : gsn::synth_continuous(c.synth_n, c.seed);
  gsn::write_matrix(fs::path(c.output_dir) / "synth.bin", {data, c.seed, c.hash()});
  write_manifest(c, "synth", {"synth.bin"});
  std::cout << "wrote " << data.rows() << " rows to " << (fs::path(c.output_dir) / "synth.bin").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generative stochastic networks: train, sample, inpaint, evaluate, verify"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Random seed");
    sub->add_option("--out", o.out, "Output directory");
  };
  auto chain_flags = [&](CLI::App* sub) {
    sub->add_option("--samples", o.samples, "Number of samples to record");
    sub->add_option("--burnin", o.burnin, "Burn-in steps");
    sub->add_option("--model", o.model, "Checkpoint (default OUT/model.json)");
  };

  auto* train = app.add_subcommand("train", "Train a model and write metrics.csv and model.json");
  common(train);
  train->add_option("--epochs", o.epochs, "Training epochs");
  train->add_option("--walkback", o.walkback, "none | geom:P | fixed:K");

  auto* sample = app.add_subcommand("sample", "Run the model's chain and write samples");
  common(sample);
  chain_flags(sample);

  auto* inpaint = app.add_subcommand("inpaint", "Clamped chains on test digits");
  common(inpaint);
  chain_flags(inpaint);
  inpaint->add_option("--clamp", o.clamp, "right-half or a comma-separated index list");

  auto* eval = app.add_subcommand("eval", "Parzen log-likelihood of a sample matrix on the test set");
  common(eval);
  eval->add_option("--samples-file", o.samples_file, "Sample matrix (default OUT/means.bin)");

  auto* verify = app.add_subcommand("verify", "Run the exact finite-state checks");
  verify->add_option("--seed", o.seed, "Random seed");

  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset");
  common(synth);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(o);
    if (*sample) return cmd_sample(o);
    if (*inpaint) return cmd_inpaint(o);
    if (*eval) return cmd_eval(o);
    if (*verify) return cmd_verify(o);
    if (*synth) return cmd_synth(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
