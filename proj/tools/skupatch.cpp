// Command-line entry point: dataset generation, training, evaluation,
// inference and the self-test.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "skupatch/errors.hpp"
#include "skupatch/selftest.hpp"
#include "skupatch/trainer.hpp"

namespace {

constexpr int kExitInput = 2;
constexpr int kExitNumerical = 3;

using namespace skupatch;

RunConfig config_or_default(const std::string& path) { return path.empty() ? RunConfig{} : load_config(path); }

int gen_data(const std::string& config_path, std::uint64_t seed, const std::string& out) {
  const RunConfig cfg = config_or_default(config_path);
  const DatasetManifest m = build_dataset(cfg.data, seed, out);
  std::size_t train = 0;
  for (const auto& s : m.scenes) train += s.train ? 1 : 0;
  std::cout << "wrote " << train << " training and " << m.scenes.size() - train << " test scenes, "
            << m.patches.size() << " patches to " << out << "\n";
  return 0;
}

int train(const std::string& config_path, const std::string& data, std::uint64_t seed, const std::string& out,
          long steps) {
  RunConfig cfg = config_or_default(config_path);
  if (steps >= 0) cfg.train.steps = static_cast<std::size_t>(steps);
  const LoadedDataset ds = load_dataset(data);
  std::filesystem::create_directories(out);
  {
    std::ofstream f(std::filesystem::path(out) / "config.txt");
    f << serialize(cfg);
  }
  TrainOptions opts;
  opts.out_dir = out;
  opts.progress = &std::cout;
  const TrainOutcome result = train_model(cfg, ds, seed, opts);
  std::cout << "final " << result.history.back().format() << "\n";
  return 0;
}

int eval(const std::string& ckpt, const std::string& data, const std::string& split, std::size_t patches,
         bool ablate, const std::string& out, std::size_t threads, double threshold) {
  const SkuPatchModel<float> model = model_from_checkpoint(load_checkpoint(ckpt));
  const LoadedDataset ds = load_dataset(data);
  EvalOptions opts;
  opts.split = parse_split(split);
  opts.patches = patches;
  opts.zero_patch_tokens = ablate;
  opts.threads = threads ? threads : default_threads();
  opts.score_threshold = threshold;
  const EvalReport report = evaluate_model(model, ds, opts);
  std::cout << report.summary();
  if (!out.empty()) {
    std::ofstream f(out);
    if (!f) throw InputError("cannot write " + out);
    f << report.full();
  }
  return 0;
}

int infer_cmd(const std::string& ckpt, const std::string& image_path, const std::vector<std::string>& patch_paths,
              const std::string& out, double threshold) {
  const SkuPatchModel<float> model = model_from_checkpoint(load_checkpoint(ckpt));
  const Image image = read_ppm(image_path);
  std::vector<Image> patches;
  for (const auto& p : patch_paths) patches.push_back(read_ppm(p));
  const InferenceResult r = infer(model, image, patches);
  write_inference(out, image, r, threshold);
  std::size_t kept = 0;
  for (const auto& d : r.detections) kept += d.score >= threshold ? 1 : 0;
  std::cout << kept << " detections above " << threshold << " written to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Patch-guided instance segmentation: data, training, evaluation, inference"};
  app.require_subcommand(1);

  std::string config, data, out, ckpt, split = "unseen", image, report_out;
  std::vector<std::string> patch_files;
  std::uint64_t seed = 0;
  std::size_t patches = 1, threads = 0;
  long steps = -1;
  bool ablate = false;
  double threshold = 0.5;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset and its manifest");
  gen->add_option("--config", config, "Config file (key = value)");
  gen->add_option("--seed", seed, "Generator seed")->required();
  gen->add_option("--out", out, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train a model");
  tr->add_option("--config", config, "Config file (key = value)");
  tr->add_option("--data", data, "Dataset manifest")->required()->check(CLI::ExistingFile);
  tr->add_option("--seed", seed, "Training seed")->required();
  tr->add_option("--out", out, "Output directory")->required();
  tr->add_option("--steps", steps, "Override the configured step count");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--ckpt", ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", data, "Dataset manifest")->required()->check(CLI::ExistingFile);
  ev->add_option("--split", split, "seen, unseen or all")->check(CLI::IsMember({"seen", "unseen", "all"}));
  ev->add_option("--patches", patches, "Patches per query")->check(CLI::Range(1, 10));
  ev->add_flag("--ablate-patch", ablate, "Zero the patch tokens");
  ev->add_option("--out", report_out, "Write the full report here");
  ev->add_option("--threads", threads, "Worker threads (default: SKUPATCH_THREADS or all cores)");
  ev->add_option("--threshold", threshold, "Score threshold for recall/precision");

  auto* inf = app.add_subcommand("infer", "Segment one image given SKU patches");
  inf->add_option("--ckpt", ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  inf->add_option("--image", image, "Scene image (PPM)")->required()->check(CLI::ExistingFile);
  inf->add_option("--patch", patch_files, "Patch image (PPM), repeatable")->required()->check(CLI::ExistingFile);
  inf->add_option("--out", out, "Output directory")->default_val("infer_out");
  inf->add_option("--threshold", threshold, "Score threshold");

  auto* st = app.add_subcommand("selftest", "Forward pass per ablation configuration plus oracle checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInput;
  }

  try {
    if (*gen) return gen_data(config, seed, out);
    if (*tr) return train(config, data, seed, out, steps);
    if (*ev) return eval(ckpt, data, split, patches, ablate, report_out, threads, threshold);
    if (*inf) return infer_cmd(ckpt, image, patch_files, out, threshold);
    if (*st) return run_selftest(std::cout) ? 0 : 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  }
  return 0;
}
