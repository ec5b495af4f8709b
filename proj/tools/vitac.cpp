#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vitac/harness.hpp"

namespace fs = std::filesystem;
using namespace vitac;

namespace {

struct CommonOpts {
  std::string config_file;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_file, "layered JSON config file");
  cmd->add_option("--set", opts.overrides,
                  "config override, section.key=value (repeatable)");
}

Config resolve(const CommonOpts& opts) {
  Config c;
  if (!opts.config_file.empty()) c.load_file(opts.config_file);
  for (const auto& kv : opts.overrides) c.set_flag(kv);
  return c;
}

std::vector<Trajectory> load_or_collect(const Config& c,
                                        const std::string& data_dir,
                                        const EnvConfig& env_cfg,
                                        const std::vector<CameraConfig>& cams,
                                        const TactileConfig& tac_cfg) {
  if (!data_dir.empty()) return load_dataset(data_dir).first;
  CollectConfig cc;
  cc.count = c.get<int>("dataset.count");
  cc.expert_noise_std = c.get<double>("dataset.expert_noise_std");
  cc.seed = c.get<uint64_t>("dataset.seed");
  return collect_demos(cc, env_cfg, cams, tac_cfg);
}

int cmd_collect(const CommonOpts& opts, const std::string& out,
                int inspect_frames) {
  Config c = resolve(opts);
  const EnvConfig env_cfg;
  const TactileConfig tac_cfg;
  const auto cams = default_cameras();
  CollectConfig cc;
  cc.count = c.get<int>("dataset.count");
  cc.expert_noise_std = c.get<double>("dataset.expert_noise_std");
  cc.seed = c.get<uint64_t>("dataset.seed");
  auto demos = collect_demos(cc, env_cfg, cams, tac_cfg);
  save_dataset(out, demos, DatasetMeta{cc.count, cc.expert_noise_std, cc.seed});
  c.write_resolved(out + "/config.json");
  std::cout << "collected " << demos.size() << " demonstrations into " << out
            << "\n";
  if (inspect_frames > 0) {
    // LAB renders of one expert episode, for human inspection only
    const std::string png_dir = out + "/inspect";
    fs::create_directories(png_dir);
    WorldState s = reset(env_cfg, mix_seed(cc.seed, 0));
    ContactState contact;
    Rng rng(mix_seed(cc.seed, 0x504e47u));
    int written = 0;
    for (int t = 0; !is_terminal(s, env_cfg) && written < inspect_frames;
         ++t) {
      TactileFrame frame = simulate_sensor(contact, tac_cfg);
      char name[32];
      std::snprintf(name, sizeof(name), "/tactile_%03d.png", t);
      write_png(render_lab(frame), png_dir + name);
      written += 1;
      auto res = step(s, scripted_expert(s, cc.expert_noise_std, rng, env_cfg),
                      env_cfg);
      s = res.state;
      contact = res.contact;
    }
    std::cout << "wrote " << written << " tactile renders to " << png_dir
              << "\n";
  }
  return 0;
}

int cmd_pretrain(const CommonOpts& opts, const std::string& data,
                 const std::string& out) {
  Config c = resolve(opts);
  const EnvConfig env_cfg;
  const TactileConfig tac_cfg;
  const auto cams = default_cameras();
  auto dataset = load_or_collect(c, data, env_cfg, cams, tac_cfg);
  auto [train_set, val_set] = split(dataset, c.get<double>("split.train_frac"),
                                    c.get<uint64_t>("split.seed"));

  const EncoderConfig ecfg;
  Rng enc_rng(mix_seed(c.get<uint64_t>("encoders.seed"), 0));
  VisionEncoder ev(ecfg, enc_rng);
  TactileEncoder et(ecfg, enc_rng);
  PretrainConfig pcfg;
  pcfg.n = c.get<int>("pretrain.n");
  pcfg.dt_min = c.get<int>("pretrain.dt_min");
  pcfg.tau = c.get<double>("pretrain.tau");
  pcfg.epochs = c.get<int>("pretrain.epochs");
  pcfg.batch_traj = c.get<int>("pretrain.batch_traj");
  pcfg.lr = c.get<double>("pretrain.lr");
  Rng rng(mix_seed(c.get<uint64_t>("pretrain.seed"), 0));
  PretrainReport report = pretrain(train_set, ev, et, pcfg, rng);

  fs::create_directories(out);
  save_checkpoint(ev.params(), out + "/vision_encoder");
  save_checkpoint(et.params(), out + "/tactile_encoder");
  std::ofstream curve(out + "/pretrain_curve.csv");
  curve << "step,loss,retrieval_top1\n";
  for (const auto& row : report.curve)
    curve << row.step << "," << row.loss << "," << row.retrieval_top1 << "\n";
  c.write_resolved(out + "/config.json");
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
  if (!report.curve.empty())
    std::cout << "pretrained encoders: final loss "
              << report.curve.back().loss << ", retrieval "
              << report.curve.back().retrieval_top1 << " -> " << out << "\n";
  return 0;
}

int cmd_train(const CommonOpts& opts, const std::string& data,
              const std::string& out, const std::string& policy,
              const std::string& modality_str,
              const std::string& encoders_dir) {
  Config c = resolve(opts);
  require(policy == "act" || policy == "diffusion",
          "train: --policy must be act or diffusion");
  const Modality modality = parse_modality(modality_str);
  const EnvConfig env_cfg;
  const TactileConfig tac_cfg;
  const auto all_cams = default_cameras();
  auto dataset = load_or_collect(c, data, env_cfg, all_cams, tac_cfg);
  auto [train_set, val_set] = split(dataset, c.get<double>("split.train_frac"),
                                    c.get<uint64_t>("split.seed"));

  const EncoderConfig ecfg;
  Rng enc_rng(mix_seed(c.get<uint64_t>("encoders.seed"), 0));
  VisionEncoder ev(ecfg, enc_rng);
  TactileEncoder et(ecfg, enc_rng);
  if (!encoders_dir.empty()) {
    load_checkpoint(ev.params(), encoders_dir + "/vision_encoder");
    load_checkpoint(et.params(), encoders_dir + "/tactile_encoder");
  }
  detail::EncoderSnapshot snap{detail::snapshot(ev.params()),
                               detail::snapshot(et.params())};

  TrainedPolicy tp =
      train_cell(c, policy, modality, train_set, snap, all_cams);
  MetricsReport metrics =
      evaluate_policy(c, tp, !encoders_dir.empty(), env_cfg, tac_cfg);

  save_policy(tp, c, out);
  std::ofstream curve(out + "/train_curve.csv");
  curve << "step,loss,recon_mse\n";
  for (const auto& row : tp.train_report.curve)
    curve << row.step << "," << row.loss << "," << row.recon_mse << "\n";
  std::ofstream rep(out + "/metrics.json");
  rep << to_json(metrics).dump(2) << "\n";
  std::cout << policy << "/" << modality_str << ": success rate "
            << metrics.success_rate << " over " << metrics.episodes
            << " episodes -> " << out << "\n";
  return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& model_dir,
             const std::string& out) {
  Config c = resolve(opts);
  const EnvConfig env_cfg;
  const TactileConfig tac_cfg;
  MetricsReport r;
  if (!model_dir.empty()) {
    TrainedPolicy tp = load_policy(model_dir);
    r = evaluate_policy(c, tp, false, env_cfg, tac_cfg);
  } else {
    r = evaluate(expert_episode_fn(env_cfg), c.get<int>("eval.episodes"),
                 c.get<double>("eval.noise_std"),
                 c.get<uint64_t>("eval.seed"));
    r.config_echo = {{"policy", "scripted_expert"},
                     {"eval_noise_std", c.get<double>("eval.noise_std")},
                     {"eval_seed", c.get<uint64_t>("eval.seed")}};
  }
  const std::string text = to_json(r).dump(2);
  if (!out.empty()) {
    fs::create_directories(out);
    std::ofstream rep(out + "/metrics.json");
    rep << text << "\n";
    c.write_resolved(out + "/config.json");
  }
  std::cout << text << "\n";
  return 0;
}

int cmd_matrix(const CommonOpts& opts, const std::string& out) {
  Config c = resolve(opts);
  MatrixResult r = run_matrix(c, out);
  std::cout << r.summary;
  std::cout << "combined CSV: " << out << "/combined.csv\n";
  return r.all_ok ? 0 : 1;
}

int cmd_report(const std::string& dir) {
  std::ifstream summary(dir + "/summary.txt");
  require(summary.good(),
          "report: '" + dir + "' does not contain a matrix summary");
  std::cout << summary.rdbuf();
  bool all_ok = true;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ".json" ||
        entry.path().filename() == "config.json")
      continue;
    std::ifstream in(entry.path());
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.contains("ok")) continue;
    all_ok &= j["ok"].get<bool>();
  }
  return all_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"visuo-tactile cable-plugging laboratory"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string out, data, policy = "act", modality = "vision_tactile";
  std::string encoders_dir, model_dir, report_dir;
  int inspect_frames = 0;

  auto* collect = app.add_subcommand("collect", "record expert demonstrations");
  add_common(collect, opts);
  collect->add_option("--out", out, "dataset output directory")->required();
  collect->add_option("--inspect", inspect_frames,
                      "also write N tactile PNG renders");

  auto* pre = app.add_subcommand("pretrain", "contrastive encoder pretraining");
  add_common(pre, opts);
  pre->add_option("--data", data, "dataset directory (collects if omitted)");
  pre->add_option("--out", out, "checkpoint output directory")->required();

  auto* train = app.add_subcommand("train", "train and evaluate one policy");
  add_common(train, opts);
  train->add_option("--data", data, "dataset directory (collects if omitted)");
  train->add_option("--out", out, "output directory")->required();
  train->add_option("--policy", policy, "act or diffusion");
  train->add_option("--modality", modality,
                    "vision, tactile, or vision_tactile");
  train->add_option("--encoders", encoders_dir,
                    "pretrained encoder checkpoint directory");

  auto* ev = app.add_subcommand(
      "eval", "evaluate a trained policy (or the expert oracle)");
  add_common(ev, opts);
  ev->add_option("--model", model_dir,
                 "trained policy directory (expert oracle if omitted)");
  ev->add_option("--out", out, "report output directory");

  auto* matrix = app.add_subcommand("matrix", "run the experiment matrix");
  add_common(matrix, opts);
  matrix->add_option("--out", out, "matrix output directory")->required();

  auto* report = app.add_subcommand("report", "summarize a matrix directory");
  report->add_option("--dir", report_dir, "matrix output directory")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(collect)) return cmd_collect(opts, out, inspect_frames);
    if (app.got_subcommand(pre)) return cmd_pretrain(opts, data, out);
    if (app.got_subcommand(train))
      return cmd_train(opts, data, out, policy, modality, encoders_dir);
    if (app.got_subcommand(ev)) return cmd_eval(opts, model_dir, out);
    if (app.got_subcommand(matrix)) return cmd_matrix(opts, out);
    if (app.got_subcommand(report)) return cmd_report(report_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
