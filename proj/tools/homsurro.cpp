#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"

#include "homsurro/descriptors/pca.hpp"
#include "homsurro/descriptors/twopoint.hpp"
#include "homsurro/loadpath/paths.hpp"
#include "homsurro/micro/sve.hpp"
#include "homsurro/pipeline/checkpoint.hpp"
#include "homsurro/pipeline/dataset.hpp"
#include "homsurro/pipeline/evaluate.hpp"
#include "homsurro/pipeline/selftest.hpp"
#include "homsurro/pipeline/train.hpp"

namespace {

using namespace homsurro;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;

/// Relative paths resolve against HOMSURRO_DATA_DIR when it is set.
std::string resolve(const std::string& path) {
  if (path.empty() || path.front() == '/') return path;
  const char* base = std::getenv("HOMSURRO_DATA_DIR");
  if (!base || !*base) return path;
  return (std::filesystem::path(base) / path).string();
}

std::size_t default_jobs() {
  const unsigned n = std::thread::hardware_concurrency();
  return n ? n : 1;
}

seqmodel::MicroEncoding micro_from_flag(const std::string& s) {
  if (s == "none") return seqmodel::MicroEncoding::none;
  if (s == "pca") return seqmodel::MicroEncoding::descriptor;
  if (s == "cnn") return seqmodel::MicroEncoding::image;
  throw std::runtime_error("--micro must be none|pca|cnn");
}

seqmodel::SurrogateConfig arch_from_flags(const std::string& preset,
                                          const std::string& micro) {
  const auto enc = micro_from_flag(micro);
  if (preset == "desk") return seqmodel::SurrogateConfig::desk(enc);
  if (preset == "paper" || preset == "full")
    return seqmodel::SurrogateConfig::full(enc);
  throw std::runtime_error("--preset must be desk|paper");
}

struct TrainFlags {
  std::string data, out_dir, init, basis_path, preset = "desk",
              micro = "none", config_path;
  std::size_t epochs = 10, batch = 100, warmup = 4000, jobs = default_jobs();
  std::uint64_t seed = 0;
  bool fine_tune = false, resume = false, no_truncate = false;
};

/// RunConfig JSON mirrors the training flags; unknown keys are rejected
/// before any work starts.
void apply_config_file(TrainFlags& f) {
  std::ifstream in(resolve(f.config_path));
  if (!in) throw std::runtime_error("cannot open config: " + f.config_path);
  const auto j = nlohmann::json::parse(in);
  static const std::vector<std::string> known = {
      "data",   "out",   "init",   "basis",     "preset", "micro",
      "epochs", "batch", "warmup", "fine_tune", "seed",   "jobs",
      "no_truncate"};
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw std::runtime_error("unknown config key: " + key);
  }
  if (j.contains("data")) f.data = j["data"].get<std::string>();
  if (j.contains("out")) f.out_dir = j["out"].get<std::string>();
  if (j.contains("init")) f.init = j["init"].get<std::string>();
  if (j.contains("basis")) f.basis_path = j["basis"].get<std::string>();
  if (j.contains("preset")) f.preset = j["preset"].get<std::string>();
  if (j.contains("micro")) f.micro = j["micro"].get<std::string>();
  if (j.contains("epochs")) f.epochs = j["epochs"].get<std::size_t>();
  if (j.contains("batch")) f.batch = j["batch"].get<std::size_t>();
  if (j.contains("warmup")) f.warmup = j["warmup"].get<std::size_t>();
  if (j.contains("fine_tune")) f.fine_tune = j["fine_tune"].get<bool>();
  if (j.contains("seed")) f.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("jobs")) f.jobs = j["jobs"].get<std::size_t>();
  if (j.contains("no_truncate")) f.no_truncate = j["no_truncate"].get<bool>();
}

int cmd_microgen(double fvr, std::uint64_t seed, const std::string& out,
                 const std::string& json_out, double cell, double fiber_d,
                 std::size_t res, std::size_t count) {
  auto numbered = [](const std::string& path, std::size_t i) {
    const auto dot = path.rfind('.');
    if (dot == std::string::npos) return path + "_" + std::to_string(i);
    return path.substr(0, dot) + "_" + std::to_string(i) + path.substr(dot);
  };
  for (std::size_t i = 0; i < count; ++i) {
    const auto fibers = micro::generate_sve(
        count == 1 ? seed : ndcore::derive_seed(seed, i), fvr, cell, fiber_d);
    const auto grid = micro::rasterize(fibers, res);
    const std::string path =
        count == 1 ? resolve(out) : numbered(resolve(out), i);
    micro::write_pgm(grid, path);
    if (!json_out.empty()) {
      const std::string jpath =
          count == 1 ? resolve(json_out) : numbered(resolve(json_out), i);
      std::ofstream jf(jpath);
      jf << micro::fiberset_to_json(fibers) << "\n";
    }
    std::cout << path << " fvr " << grid.fvr << " fibers "
              << fibers.centers.size() << "\n";
  }
  return kExitOk;
}

int cmd_pathgen(const std::string& kind, std::size_t n, std::size_t steps,
                std::uint64_t seed, const std::string& out) {
  std::ofstream of(resolve(out), std::ios::binary);
  if (!of) throw std::runtime_error("cannot open for writing: " + out);
  for (std::size_t i = 0; i < n; ++i) {
    ndcore::Rng rng(ndcore::derive_seed(seed, i, 1));
    bool random_kind = kind == "random";
    if (kind == "mixed") random_kind = i % 2 == 0;
    loadpath::StretchPath path;
    if (random_kind) {
      path = loadpath::random_path(rng, steps);
    } else {
      const auto mode = static_cast<loadpath::CyclicMode>(rng.bounded(4));
      path = loadpath::cyclic_path(rng, mode, steps);
    }
    nlohmann::ordered_json j;
    j["id"] = i;
    j["kind"] = random_kind ? "random" : "cyclic";
    j["strain"] = loadpath::to_strain_path(path);
    of << j.dump() << "\n";
  }
  return kExitOk;
}

int cmd_simulate(const std::string& paths_file, const std::string& out,
                 const std::string& kind, std::size_t n, double mix_random,
                 std::uint64_t seed, std::size_t steps, double fvr_min,
                 double fvr_max, std::size_t res, std::size_t jobs,
                 double fixed_fvr) {
  pipeline::GenConfig cfg;
  cfg.kind = kind == "mixture" ? pipeline::DatasetKind::mixture
                               : pipeline::DatasetKind::homogeneous;
  cfg.count = n;
  cfg.random_fraction = mix_random;
  cfg.seed = seed;
  cfg.steps = steps;
  cfg.fvr_min = fvr_min;
  cfg.fvr_max = fvr_max;
  cfg.resolution = res;
  cfg.jobs = jobs;

  if (paths_file.empty()) {
    pipeline::generate_dataset(cfg, resolve(out));
    return kExitOk;
  }

  // oracle over externally provided strain paths
  std::ifstream in(resolve(paths_file));
  if (!in) throw std::runtime_error("cannot open: " + paths_file);
  std::ofstream of(resolve(out), std::ios::binary);
  if (!of) throw std::runtime_error("cannot open for writing: " + out);
  std::string line;
  std::size_t index = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    pipeline::SequenceRecord r;
    r.id = j.contains("id") ? j["id"].get<std::int64_t>()
                            : static_cast<std::int64_t>(index);
    r.kind = j.value("kind", "random");
    r.strain = j.at("strain").get<std::vector<std::array<double, 3>>>();
    if (cfg.kind == pipeline::DatasetKind::mixture) {
      double fvr = fixed_fvr;
      if (fvr < 0.0) {
        ndcore::Rng rng(ndcore::derive_seed(seed, index, 2));
        fvr = rng.uniform(fvr_min, fvr_max);
      }
      const auto fibers = micro::generate_sve_retrying(
          ndcore::derive_seed(seed, index, 3), fvr);
      r.micro = micro::rasterize(fibers, res);
      r.fvr = r.micro->fvr;
      r.stress =
          pipeline::simulate_mixture(r.strain, r.fvr, cfg.matrix, cfg.fiber);
    } else {
      r.stress = pipeline::simulate_homogeneous(r.strain, cfg.matrix);
    }
    of << pipeline::record_to_json(r) << "\n";
    ++index;
  }
  return kExitOk;
}

int cmd_fit_pca(const std::string& data, std::size_t sve_count,
                std::uint64_t seed, double fvr_min, double fvr_max,
                std::size_t res, std::size_t k, const std::string& out,
                const std::string& variance_csv, std::size_t jobs) {
  std::vector<std::vector<double>> feats;
  if (!data.empty()) {
    const auto records = pipeline::read_jsonl(resolve(data));
    for (const auto& r : records)
      if (r.micro)
        feats.push_back(descriptors::matrix_autocorrelation(*r.micro));
    if (feats.empty())
      throw std::runtime_error("dataset has no microstructure grids");
  } else {
    feats.resize(sve_count);
    const std::size_t workers = std::max<std::size_t>(1, jobs);
    std::vector<std::thread> pool;
    auto work = [&](std::size_t w) {
      for (std::size_t i = w; i < sve_count; i += workers) {
        ndcore::Rng rng(ndcore::derive_seed(seed, i, 2));
        const double fvr = rng.uniform(fvr_min, fvr_max);
        const auto fibers = micro::generate_sve_retrying(
            ndcore::derive_seed(seed, i, 3), fvr);
        feats[i] =
            descriptors::matrix_autocorrelation(micro::rasterize(fibers, res));
      }
    };
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  const auto basis = descriptors::pca_fit(feats, k);
  descriptors::save_pca(basis, resolve(out));
  std::cout << "fitted PCA on " << feats.size() << " samples; variance ratios";
  for (double v : basis.explained_variance_ratio) std::cout << " " << v;
  std::cout << "\n";
  if (!variance_csv.empty()) {
    std::ofstream cf(resolve(variance_csv));
    cf << "component,explained_variance_ratio\n";
    for (std::size_t i = 0; i < basis.explained_variance_ratio.size(); ++i)
      cf << (i + 1) << "," << basis.explained_variance_ratio[i] << "\n";
  }
  return kExitOk;
}

int cmd_train(TrainFlags f) {
  if (!f.config_path.empty()) {
    apply_config_file(f);
    f.config_path.clear();
  }
  if (f.data.empty() || f.out_dir.empty())
    throw std::runtime_error("train requires --data and --out");
  pipeline::TrainConfig cfg;
  cfg.arch = arch_from_flags(f.preset, f.micro);
  cfg.batch_size = f.batch;
  cfg.warmup_steps = f.warmup;
  cfg.epochs = f.epochs;
  cfg.fine_tune = f.fine_tune;
  cfg.seed = f.seed;
  cfg.jobs = f.jobs;
  cfg.truncate = !f.no_truncate;
  if (!f.init.empty()) cfg.init_checkpoint = resolve(f.init);
  cfg.out_dir = resolve(f.out_dir);
  cfg.resume = f.resume;

  const auto records = pipeline::read_jsonl(resolve(f.data));
  std::optional<descriptors::PCABasis> basis;
  if (!f.basis_path.empty()) basis = descriptors::load_pca(resolve(f.basis_path));
  const auto result =
      pipeline::train(cfg, records, basis ? &*basis : nullptr, &std::cout);
  std::cout << "best val_mse " << result.best_val_mse << " at epoch "
            << result.best_epoch << "; checkpoint " << result.checkpoint_dir
            << "\n";
  return kExitOk;
}

int cmd_predict(const std::string& ckpt, const std::string& strain_file,
                const std::string& out) {
  auto lc = pipeline::load_checkpoint(resolve(ckpt));
  const auto records = pipeline::read_jsonl(resolve(strain_file));
  std::ofstream of(resolve(out), std::ios::binary);
  if (!of) throw std::runtime_error("cannot open for writing: " + out);
  for (const auto& rec : records) {
    const auto desc =
        pipeline::record_descriptor(lc.model, lc.pca ? &*lc.pca : nullptr, rec);
    const auto strain = pipeline::strain_tensor(rec, &lc.standardizer);
    const auto pred = lc.model.predict_autoregressive(strain, desc);
    if (!pred.all_finite())
      throw pipeline::TrainingDiverged("non-finite prediction for record " +
                                       std::to_string(rec.id));
    nlohmann::ordered_json j;
    j["id"] = rec.id;
    std::vector<std::array<double, 4>> stress(pred.extent(0));
    for (std::size_t t = 0; t < pred.extent(0); ++t)
      for (std::size_t c = 0; c < 4; ++c)
        stress[t][c] = pred.at(t, c) * lc.standardizer.stress_std[c] +
                       lc.standardizer.stress_mean[c];
    j["stress"] = stress;
    of << j.dump() << "\n";
  }
  return kExitOk;
}

int cmd_eval(const std::string& ckpt, const std::string& data,
             const std::string& out_json, const std::string& out_csv,
             std::size_t limit, std::size_t jobs) {
  auto lc = pipeline::load_checkpoint(resolve(ckpt));
  const auto records = pipeline::read_jsonl(resolve(data));
  const auto metrics = pipeline::evaluate(
      lc.model, lc.standardizer, lc.pca ? &*lc.pca : nullptr, records, limit,
      jobs);
  std::cout << "records " << metrics.records << " overall_rmse_mpa "
            << metrics.overall_rmse << " stress_std_mpa " << metrics.stress_std
            << "\n";
  if (!out_json.empty())
    pipeline::write_metrics_json(metrics, resolve(out_json));
  if (!out_csv.empty()) pipeline::write_rmse_csv(metrics, resolve(out_csv));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  // record-level parallelism is handled by the workers; keep BLAS calls
  // single-threaded for run-to-run determinism
  setenv("OPENBLAS_NUM_THREADS", "1", 0);

  CLI::App app{
      "homsurro - transformer surrogate for history-dependent composite "
      "homogenization"};
  app.require_subcommand(1);

  auto* microgen = app.add_subcommand(
      "microgen", "generate periodic fiber microcells (PGM + JSON)");
  double mg_fvr = 0.3;
  std::uint64_t mg_seed = 0;
  std::string mg_out, mg_json;
  double mg_cell = 70.0, mg_d = 7.0;
  std::size_t mg_res = 32, mg_count = 1;
  microgen->add_option("--fvr", mg_fvr, "target fiber volume ratio");
  microgen->add_option("--seed", mg_seed, "rng seed");
  microgen->add_option("--out", mg_out, "output PGM path")->required();
  microgen->add_option("--json", mg_json, "also write the fiber centers JSON");
  microgen->add_option("--cell-size", mg_cell, "cell edge length (um)");
  microgen->add_option("--fiber-d", mg_d, "fiber diameter (um)");
  microgen->add_option("--res", mg_res, "raster resolution");
  microgen->add_option("--count", mg_count, "number of cells");

  auto* pathgen = app.add_subcommand("pathgen", "generate strain paths (JSONL)");
  std::string pg_kind = "mixed", pg_out;
  std::size_t pg_n = 10, pg_steps = 100;
  std::uint64_t pg_seed = 0;
  pathgen->add_option("--kind", pg_kind, "random|cyclic|mixed");
  pathgen->add_option("--n", pg_n, "number of paths");
  pathgen->add_option("--steps", pg_steps, "steps per path (<= 100)");
  pathgen->add_option("--seed", pg_seed, "rng seed");
  pathgen->add_option("--out", pg_out, "output JSONL")->required();

  auto* simulate = app.add_subcommand(
      "simulate",
      "constitutive oracle: self-contained dataset generation, or stress "
      "responses for pathgen output");
  std::string sim_paths, sim_out, sim_kind = "homogeneous";
  std::size_t sim_n = 1000, sim_steps = 100, sim_res = 32,
              sim_jobs = default_jobs();
  double sim_mix = 0.5, sim_fvr_min = 0.2, sim_fvr_max = 0.5, sim_fvr = -1.0;
  std::uint64_t sim_seed = 0;
  simulate->add_option("--paths", sim_paths, "strain paths JSONL (pathgen)");
  simulate->add_option("--out", sim_out, "output dataset JSONL")->required();
  simulate->add_option("--kind", sim_kind, "homogeneous|mixture");
  simulate->add_option("--n", sim_n, "records to generate (without --paths)");
  simulate->add_option("--mix-random", sim_mix, "fraction of random walks");
  simulate->add_option("--steps", sim_steps, "steps per sequence");
  simulate->add_option("--seed", sim_seed, "rng seed");
  simulate->add_option("--fvr-min", sim_fvr_min, "FVR lower bound");
  simulate->add_option("--fvr-max", sim_fvr_max, "FVR upper bound");
  simulate->add_option("--fvr", sim_fvr, "fixed FVR for --paths mixture runs");
  simulate->add_option("--res", sim_res, "raster resolution");
  simulate->add_option("--jobs", sim_jobs, "worker threads");

  auto* fitpca = app.add_subcommand(
      "fit-pca",
      "two-point statistics + PCA basis from a dataset or fresh microcells");
  std::string fp_data, fp_out, fp_csv;
  std::size_t fp_count = 1000, fp_res = 64, fp_k = 3, fp_jobs = default_jobs();
  std::uint64_t fp_seed = 0;
  double fp_min = 0.2, fp_max = 0.5;
  fitpca->add_option("--data", fp_data, "dataset JSONL (uses its grids)");
  fitpca->add_option("--sve-count", fp_count, "fresh microcells to generate");
  fitpca->add_option("--seed", fp_seed, "rng seed");
  fitpca->add_option("--fvr-min", fp_min, "FVR lower bound");
  fitpca->add_option("--fvr-max", fp_max, "FVR upper bound");
  fitpca->add_option("--res", fp_res, "raster resolution");
  fitpca->add_option("--k", fp_k, "number of components");
  fitpca->add_option("--out", fp_out, "basis manifest path")->required();
  fitpca->add_option("--variance-csv", fp_csv, "explained-variance CSV");
  fitpca->add_option("--jobs", fp_jobs, "worker threads");

  auto* train = app.add_subcommand("train", "train the surrogate");
  TrainFlags tf;
  train->add_option("--config", tf.config_path, "RunConfig JSON");
  train->add_option("--data", tf.data, "dataset JSONL");
  train->add_option("--out", tf.out_dir, "checkpoint directory");
  train->add_option("--init", tf.init, "pretrained checkpoint to start from");
  train->add_option("--basis", tf.basis_path, "PCA basis (micro=pca)");
  train->add_option("--preset", tf.preset, "desk|paper");
  train->add_option("--micro", tf.micro, "none|pca|cnn");
  train->add_option("--epochs", tf.epochs, "training epochs");
  train->add_option("--batch", tf.batch, "batch size");
  train->add_option("--warmup", tf.warmup, "warmup steps");
  train->add_option("--seed", tf.seed, "rng seed");
  train->add_option("--jobs", tf.jobs, "worker threads");
  train->add_flag("--fine-tune", tf.fine_tune, "scale the lr schedule by 0.1");
  train->add_flag("--resume", tf.resume, "continue from --out resume state");
  train->add_flag("--no-truncate", tf.no_truncate, "disable random truncation");

  auto* predict = app.add_subcommand(
      "predict", "autoregressive stress prediction for strain paths");
  std::string pr_ckpt, pr_strain, pr_out;
  predict->add_option("--ckpt", pr_ckpt, "checkpoint directory")->required();
  predict->add_option("--strain", pr_strain, "strain JSONL")->required();
  predict->add_option("--out", pr_out, "output JSONL")->required();

  auto* evalc = app.add_subcommand("eval", "metrics against ground truth");
  std::string ev_ckpt, ev_data, ev_json, ev_csv;
  std::size_t ev_limit = 0, ev_jobs = default_jobs();
  evalc->add_option("--ckpt", ev_ckpt, "checkpoint directory")->required();
  evalc->add_option("--data", ev_data, "dataset JSONL")->required();
  evalc->add_option("--json", ev_json, "metrics JSON output");
  evalc->add_option("--csv", ev_csv, "RMSE-vs-position CSV output");
  evalc->add_option("--limit", ev_limit, "evaluate only the first N records");
  evalc->add_option("--jobs", ev_jobs, "worker threads");

  auto* selftest =
      app.add_subcommand("selftest", "run the fast invariant suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (microgen->parsed())
      return cmd_microgen(mg_fvr, mg_seed, mg_out, mg_json, mg_cell, mg_d,
                          mg_res, mg_count);
    if (pathgen->parsed())
      return cmd_pathgen(pg_kind, pg_n, pg_steps, pg_seed, pg_out);
    if (simulate->parsed())
      return cmd_simulate(sim_paths, sim_out, sim_kind, sim_n, sim_mix,
                          sim_seed, sim_steps, sim_fvr_min, sim_fvr_max,
                          sim_res, sim_jobs, sim_fvr);
    if (fitpca->parsed())
      return cmd_fit_pca(fp_data, fp_count, fp_seed, fp_min, fp_max, fp_res,
                         fp_k, fp_out, fp_csv, fp_jobs);
    if (train->parsed()) return cmd_train(tf);
    if (predict->parsed()) return cmd_predict(pr_ckpt, pr_strain, pr_out);
    if (evalc->parsed())
      return cmd_eval(ev_ckpt, ev_data, ev_json, ev_csv, ev_limit, ev_jobs);
    if (selftest->parsed()) return pipeline::run_selftest(std::cout);
  } catch (const pipeline::TrainingDiverged& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitUsage;
}
