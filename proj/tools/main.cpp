// Copyright 2026 semamba authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "semamba/gradsuite.hpp"
#include "semamba/semamba.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct SynthArgs {
  std::string spec_path, out_dir;
  uint64_t seed = 1;
};

int cmd_synth(const SynthArgs& a) {
  semamba::DatasetSpec spec =
      semamba::dataset_spec_from_toml(semamba::Toml::parse_file(a.spec_path));
  semamba::DatasetManifest m = semamba::build_dataset(
      spec.count, spec.snrs, spec.cleans, spec.noises, spec.duration_s,
      spec.sample_rate, a.seed);
  fs::create_directories(a.out_dir);
  for (size_t i = 0; i < m.items.size(); ++i) {
    auto [clean, noisy] = semamba::synth_pair(m.items[i], m.duration_s,
                                              m.sample_rate);
    char name[64];
    std::snprintf(name, sizeof(name), "pair_%05zu", i);
    semamba::write_wav(a.out_dir + "/" + name + "_clean.wav", clean,
                       long(m.sample_rate));
    semamba::write_wav(a.out_dir + "/" + name + "_noisy.wav", noisy,
                       long(m.sample_rate));
  }
  semamba::save_manifest(a.out_dir + "/manifest.json", m);
  std::cout << "wrote " << m.items.size() << " mixture pairs and manifest.json to "
            << a.out_dir << "\n";
  return 0;
}

struct TrainArgs {
  std::string model_kind, config_path, data_path, out_path, resume_path;
};

int cmd_train(const TrainArgs& a) {
  semamba::TrainConfig cfg =
      semamba::train_config_from_toml(semamba::Toml::parse_file(a.config_path));
  if (!a.model_kind.empty() && a.model_kind != cfg.model.kind)
    throw semamba::ConfigError("train: --model " + a.model_kind +
                               " but the config declares '" + cfg.model.kind +
                               "'");
  std::string manifest = a.data_path;
  if (fs::is_directory(manifest)) manifest += "/manifest.json";
  semamba::DatasetManifest data = semamba::load_manifest(manifest);
  semamba::TrainStats stats =
      semamba::train(cfg, data, a.out_path, a.resume_path, &std::cout);
  std::cout << "checkpoint written to " << a.out_path
            << " (final loss " << stats.final_loss << ")\n";
  return 0;
}

struct EnhanceArgs {
  std::string in_path, ckpt_path, out_path, pcs_path, model_kind;
};

int cmd_enhance(const EnhanceArgs& a) {
  semamba::PcsTable pcs;
  bool use_pcs = !a.pcs_path.empty();
  if (use_pcs) pcs = semamba::PcsTable::load(a.pcs_path);
  semamba::EnhanceResult r = semamba::enhance_file(
      a.in_path, a.ckpt_path, a.out_path, use_pcs ? &pcs : nullptr,
      a.model_kind);
  if (r.total > 0 && double(r.clipped) / double(r.total) > 0.001)
    std::cerr << "warning: " << r.clipped << "/" << r.total
              << " samples clipped\n";
  std::cout << "wrote " << a.out_path << "\n";
  return 0;
}

struct EvalArgs {
  std::string ref_path, est_path;
};

int cmd_eval(const EvalArgs& a) {
  semamba::WavData ref = semamba::read_wav(a.ref_path);
  semamba::WavData est = semamba::read_wav(a.est_path);
  if (ref.sample_rate != est.sample_rate)
    throw semamba::IoError("eval: sample rates differ");
  if (ref.samples.size() != est.samples.size())
    throw semamba::IoError("eval: lengths differ");
  json out;
  out["si_sdr"] = semamba::si_sdr(est.samples, ref.samples);
  out["stoi"] =
      semamba::stoi(est.samples, ref.samples, double(ref.sample_rate));
  std::cout << out.dump() << "\n";
  return 0;
}

struct BenchArgs {
  std::string sweep = "256:65536";
  std::string out_csv, out_json;
  long d_model = 128, layers = 2, d_state = 16;
};

double time_scan_once(long T) {
  semamba::Rng rng(0xBE7C);
  const long C = 8, S = 16;
  semamba::Tensor x = semamba::Tensor::rand_uniform({T, C}, rng, -1, 1);
  semamba::Tensor delta = semamba::Tensor::rand_uniform({T, C}, rng, 0.05, 0.5);
  semamba::Tensor A = semamba::Tensor::rand_uniform({C, S}, rng, -2.0, -0.2);
  semamba::Tensor B = semamba::Tensor::rand_uniform({T, S}, rng, -1, 1);
  semamba::Tensor Cm = semamba::Tensor::rand_uniform({T, S}, rng, -1, 1);
  semamba::Tensor D = semamba::Tensor::rand_uniform({C}, rng, -1, 1);
  double best = 1e300;
  for (int rep = 0; rep < 3; ++rep) {
    auto t0 = std::chrono::steady_clock::now();
    semamba::Tensor y = semamba::selective_scan_parallel(x, delta, A, B, Cm, D);
    auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double>(t1 - t0).count() +
                              0.0 * y.data()[0]);
  }
  return best;
}

int cmd_bench(const BenchArgs& a) {
  auto colon = a.sweep.find(':');
  if (colon == std::string::npos)
    throw semamba::ConfigError("bench: --sweep expects T0:T1");
  long t0 = std::stol(a.sweep.substr(0, colon));
  long t1 = std::stol(a.sweep.substr(colon + 1));
  if (t0 < 1 || t1 < t0) throw semamba::ConfigError("bench: bad sweep range");
  json sweep = json::array();
  std::ostringstream csv;
  csv << "T,flops_mamba,flops_attention,scan_seconds\n";
  for (long T = t0; T <= t1; T *= 2) {
    semamba::FlopsReport mamba = semamba::count_mamba_stack(
        a.d_model, a.layers, T, a.d_state);
    semamba::FlopsReport attn =
        semamba::count_attention_baseline(a.d_model, a.layers, T);
    double secs = time_scan_once(T);
    csv << T << "," << mamba.total_flops << "," << attn.total_flops << ","
        << secs << "\n";
    sweep.push_back({{"T", T},
                     {"flops_mamba", mamba.total_flops},
                     {"flops_attention", attn.total_flops},
                     {"scan_seconds", secs}});
  }
  if (!a.out_csv.empty()) {
    std::ofstream f(a.out_csv, std::ios::trunc);
    if (!f) throw semamba::IoError("bench: cannot open " + a.out_csv);
    f << csv.str();
  }
  semamba::FlopsReport m0 = semamba::count_mamba_stack(a.d_model, a.layers, t0,
                                                       a.d_state);
  semamba::FlopsReport a0 =
      semamba::count_attention_baseline(a.d_model, a.layers, t0);
  std::cout << "mamba stack (d_model=" << a.d_model << ", layers=" << a.layers
            << ")\n"
            << semamba::flops_text(m0) << "\nattention baseline\n"
            << semamba::flops_text(a0) << "\n"
            << csv.str();
  if (!a.out_json.empty()) {
    json out;
    out["sweep"] = sweep;
    auto report_json = [](const semamba::FlopsReport& r) {
      json layers = json::array();
      for (const auto& e : r.layers)
        layers.push_back(
            {{"name", e.name}, {"flops", e.flops}, {"params", e.params}});
      return json{{"T", r.T},
                  {"layers", layers},
                  {"total_flops", r.total_flops},
                  {"total_params", r.total_params},
                  {"t_scaling_exponent", r.t_scaling_exponent}};
    };
    out["mamba"] = report_json(m0);
    out["attention"] = report_json(a0);
    std::ofstream f(a.out_json, std::ios::trunc);
    if (!f) throw semamba::IoError("bench: cannot open " + a.out_json);
    f << out.dump(2) << "\n";
  }
  return 0;
}

int cmd_gradcheck(const std::string& module) {
  std::vector<semamba::GradSuiteItem> items = semamba::gradcheck_module(module);
  bool all_pass = true;
  for (const auto& it : items) {
    all_pass = all_pass && it.result.pass;
    std::printf("[%s] %-28s max_rel_err=%.3e (tol %.0e)\n",
                it.result.pass ? "PASS" : "FAIL", it.name.c_str(),
                it.result.max_rel_err, it.tol);
  }
  std::printf("%zu checks, %s\n", items.size(), all_pass ? "all passed" : "FAILURES");
  return all_pass ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"speech enhancement with selective state-space sequence models"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s_synth = app.add_subcommand("synth", "generate a synthetic mixture dataset");
  s_synth->add_option("--spec", synth.spec_path, "dataset spec (TOML)")->required();
  s_synth->add_option("--out", synth.out_dir, "output directory")->required();
  s_synth->add_option("--seed", synth.seed, "dataset seed");

  TrainArgs train;
  auto* s_train = app.add_subcommand("train", "train a model");
  s_train->add_option("--model", train.model_kind, "basic|advanced (checked against config)");
  s_train->add_option("--config", train.config_path, "train config (TOML)")->required();
  s_train->add_option("--data", train.data_path, "dataset dir or manifest.json")->required();
  s_train->add_option("--out", train.out_path, "output checkpoint path")->required();
  s_train->add_option("--resume", train.resume_path, "checkpoint to resume from");

  EnhanceArgs enh;
  auto* s_enh = app.add_subcommand("enhance", "enhance a wav file");
  s_enh->add_option("--in", enh.in_path, "input wav (16-bit mono PCM)")->required();
  s_enh->add_option("--ckpt", enh.ckpt_path, "model checkpoint")->required();
  s_enh->add_option("--out", enh.out_path, "output wav")->required();
  s_enh->add_option("--pcs", enh.pcs_path, "PCS gain table (text)");
  s_enh->add_option("--model", enh.model_kind, "expected model kind");

  EvalArgs eval;
  auto* s_eval = app.add_subcommand("eval", "SI-SDR and STOI of an estimate");
  s_eval->add_option("--ref", eval.ref_path, "clean reference wav")->required();
  s_eval->add_option("--est", eval.est_path, "estimate wav")->required();

  BenchArgs bench;
  auto* s_bench = app.add_subcommand("bench", "FLOPs curves and scan wall-clock scaling");
  s_bench->add_option("--sweep", bench.sweep, "T0:T1 doubling sweep");
  s_bench->add_option("--out", bench.out_csv, "CSV output path");
  s_bench->add_option("--json", bench.out_json, "JSON report path");
  s_bench->add_option("--d-model", bench.d_model, "model width");
  s_bench->add_option("--layers", bench.layers, "layer count");
  s_bench->add_option("--d-state", bench.d_state, "SSM state size");

  std::string module = "all";
  auto* s_grad = app.add_subcommand("gradcheck", "finite-difference gradient report");
  s_grad->add_option("--module", module, "ssm|models|losses|primitives|all");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (s_synth->parsed()) return cmd_synth(synth);
    if (s_train->parsed()) return cmd_train(train);
    if (s_enh->parsed()) return cmd_enhance(enh);
    if (s_eval->parsed()) return cmd_eval(eval);
    if (s_bench->parsed()) return cmd_bench(bench);
    if (s_grad->parsed()) return cmd_gradcheck(module);
  } catch (const semamba::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const semamba::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const semamba::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
