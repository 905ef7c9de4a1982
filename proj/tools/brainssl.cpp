// brainssl command-line tool: phantom generation, the three training stages,
// evaluation, few-shot and cross-validation experiments, and run reports.

#include <CLI11.hpp>

#include <torch/headeronly/version.h>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "brainssl/error.hpp"
#include "brainssl/nifti.hpp"
#include "brainssl/pipeline.hpp"
#include "plots.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace brainssl;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitUsage = 2;

struct Options {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  std::optional<uint64_t> seed;
  std::string init_from;
  bool strict_encoder = false;
  // eval
  std::string pred, gt;
  int64_t classes = 0;
  int connectivity = 26;
  // phantom-gen
  int64_t n = 8;
  bool diseased = false;
  std::vector<int64_t> grid{64, 64, 64};
  int64_t modalities = 2;
  std::vector<double> lesion_radius{3.0, 7.0};
  std::vector<int64_t> n_lesions{1, 3};
  double noise = 0.05;
  // report
  std::string runlog;
  std::string fewshot;
};

json versions() {
  const auto torch_version = std::to_string(TORCH_VERSION_MAJOR) + "." + std::to_string(TORCH_VERSION_MINOR) + "." +
                             std::to_string(TORCH_VERSION_PATCH);
  return {{"brainssl", BRAINSSL_VERSION},
          {"torch", torch_version},
          {"checkpoint_format", Checkpoint::kFormatVersion},
          {"compiler", __VERSION__}};
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string stage_of(const std::string& sub) {
  return sub == "pretrain1" || sub == "pretrain2" ? sub : "finetune";
}

// Config as seen by one subcommand: file (or defaults), overrides, then --seed.
ExperimentConfig resolve_config(const Options& o, const std::string& stage) {
  auto overrides = o.overrides;
  if (o.seed) overrides.push_back("train." + stage + ".seed=" + std::to_string(*o.seed));
  if (o.config.empty()) return parse_experiment(apply_overrides(json::object(), overrides));
  return load_experiment(o.config, overrides);
}

json manifest(const std::string& sub, const Options& o, const ExperimentConfig& cfg, json args) {
  const auto stage = stage_of(sub);
  auto config = cfg.to_json(stage);
  config["data"]["root"] = fs::absolute(cfg.data.resolved_root()).lexically_normal().string();
  if (!o.init_from.empty()) args["init_from"] = fs::absolute(o.init_from).lexically_normal().string();
  args["strict_encoder"] = o.strict_encoder;
  return {{"subcommand", sub},
          {"config", config},
          {"config_file", o.config},
          {"overrides", o.overrides},
          {"seed", cfg.train(stage).seed},
          {"args", std::move(args)},
          {"versions", versions()}};
}

void write_manifest(const fs::path& out, const json& m) { write_text(out / "run_manifest.json", m.dump(2) + "\n"); }

std::optional<Checkpoint> init_checkpoint(const Options& o) {
  if (o.init_from.empty()) return std::nullopt;
  return load_checkpoint(o.init_from);
}

fs::path healthy_dir(const ExperimentConfig& c) { return c.data.resolved_root() / c.data.healthy_dir; }
fs::path diseased_dir(const ExperimentConfig& c) { return c.data.resolved_root() / c.data.diseased_dir; }

// Nested label map: a voxel's value is the number of leading classes at p >= 0.5.
std::vector<float> label_map_from_probs(const torch::Tensor& probs) {
  const auto k = probs.size(0);
  const auto n = probs.numel() / k;
  const float* p = probs.data_ptr<float>();
  std::vector<float> out(static_cast<size_t>(n), 0.0f);
  for (int64_t i = 0; i < n; ++i) {
    int64_t v = 0;
    while (v < k && p[v * n + i] >= 0.5f) ++v;
    out[static_cast<size_t>(i)] = static_cast<float>(v);
  }
  return out;
}

void write_predictions(const ExperimentConfig& cfg, const Checkpoint& weights, const std::vector<LabeledCase>& cases,
                       const fs::path& dir) {
  if (cases.empty()) return;
  auto model = build_finetune_model(cfg, cases.front().image.channels(), nullptr, false, 0);
  load_weights(*model, weights);
  fs::create_directories(dir);
  for (const auto& c : cases) {
    const auto probs = predict_volume(*model, c.image).contiguous();
    Volume map(c.image.dims(), label_map_from_probs(probs), c.image.spacing(), c.image.subject_id(), {"label"});
    write_nifti(map, dir / (c.image.subject_id() + "_pred.nii.gz"));
  }
}

void write_report(const std::vector<CaseMetrics>& cases, const fs::path& dir, const std::string& stem) {
  const auto report = aggregate_report(cases);
  write_text(dir / (stem + ".csv"), report_csv(report));
  write_text(dir / (stem + ".json"), report_json(report) + "\n");
}

std::vector<LabeledCase> pick(const std::vector<LabeledCase>& cases, const std::vector<std::string>& ids) {
  std::map<std::string, const LabeledCase*> by_id;
  for (const auto& c : cases) by_id[c.image.subject_id()] = &c;
  std::vector<LabeledCase> out;
  for (const auto& id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw ValidationError("subject " + id + " is not in the labeled dataset");
    out.push_back(*it->second);
  }
  return out;
}

std::vector<std::string> ids_of(const std::vector<LabeledCase>& cases) {
  std::vector<std::string> ids;
  for (const auto& c : cases) ids.push_back(c.image.subject_id());
  return ids;
}

// ---------------------------------------------------------------------------

json cmd_phantom_gen(const Options& o) {
  if (o.grid.size() != 3) throw ValidationError("--grid needs 3 values");
  if (o.lesion_radius.size() != 2 || o.n_lesions.size() != 2)
    throw ValidationError("--lesion-radius and --n-lesions need 2 values");
  PhantomSpec spec;
  spec.grid = {o.grid[0], o.grid[1], o.grid[2]};
  spec.n_modalities = o.modalities;
  spec.diseased = o.diseased;
  spec.lesion_radius = {o.lesion_radius[0], o.lesion_radius[1]};
  spec.n_lesions = {o.n_lesions[0], o.n_lesions[1]};
  spec.noise_sigma = o.noise;
  spec.seed = o.seed.value_or(0);
  spec.validate();
  const auto records = generate_dataset(spec, o.n, o.out);
  write_manifest(o.out, {{"subcommand", "phantom-gen"},
                         {"args",
                          {{"n", o.n},
                           {"diseased", o.diseased},
                           {"grid", o.grid},
                           {"modalities", o.modalities},
                           {"lesion_radius", o.lesion_radius},
                           {"n_lesions", o.n_lesions},
                           {"noise", o.noise}}},
                         {"seed", spec.seed},
                         {"versions", versions()}});
  return {{"subjects", records.size()}};
}

json cmd_pretrain(const std::string& sub, const Options& o) {
  const auto cfg = resolve_config(o, sub);
  const bool healthy = sub == "pretrain1";
  const auto vols = load_volumes(healthy ? healthy_dir(cfg) : diseased_dir(cfg), cfg.data,
                                 healthy ? cfg.data.healthy_modalities : cfg.data.diseased_modalities);
  auto [train, val] = split_tail(vols, cfg.data.n_val);
  const auto init = init_checkpoint(o);
  write_manifest(o.out, manifest(sub, o, cfg, {{"train_volumes", train.size()}, {"val_volumes", val.size()}}));
  const auto r = run_pretrain(cfg, sub, train, val, init ? &*init : nullptr, o.strict_encoder, o.out);
  write_text(fs::path(o.out) / "summary.json", tools::runlog_summary(r.log).dump(2) + "\n");
  return {{"initial_loss", r.initial_loss},
          {"final_loss", r.final_loss},
          {"checkpoint", (fs::path(o.out) / "final.ckpt").string()}};
}

json cmd_finetune(const Options& o) {
  const auto cfg = resolve_config(o, "finetune");
  const auto cases = load_labeled(diseased_dir(cfg), cfg.data, cfg.data.diseased_modalities);
  auto [pool, test] = split_tail(cases, cfg.data.n_test);
  auto [train, val] = split_tail(pool, cfg.data.n_val);
  const auto init = init_checkpoint(o);
  write_manifest(o.out, manifest("finetune", o, cfg,
                                 {{"train_ids", ids_of(train)}, {"val_ids", ids_of(val)}, {"test_ids", ids_of(test)}}));
  const auto r = run_finetune(cfg, train, val, test, init ? &*init : nullptr, o.strict_encoder, o.out);
  write_predictions(cfg, r.training.best_checkpoint, test, fs::path(o.out) / "predictions");
  if (!test.empty()) write_report(r.test, o.out, "test_metrics");
  write_text(fs::path(o.out) / "summary.json", tools::runlog_summary(r.training.log).dump(2) + "\n");
  return {{"best_step", r.training.best_step}, {"best_val_dice", r.training.best_val_dice}, {"test_dice", r.test_dice}};
}

// Ground truth: a dataset directory (manifest.json with labels) or a folder of
// `<id>_label.nii[.gz]` maps. Predictions: `<id>_pred`, `<id>_label` or `<id>`.
std::vector<std::pair<std::string, fs::path>> ground_truth_files(const fs::path& gt) {
  std::vector<std::pair<std::string, fs::path>> out;
  if (fs::exists(gt / "manifest.json")) {
    for (const auto& r : load_manifest(gt / "manifest.json")) {
      if (!r.has_label) continue;
      fs::path p = r.paths.at("label");
      out.emplace_back(r.subject_id, p.is_absolute() ? p : gt / p);
    }
  } else {
    if (!fs::is_directory(gt)) throw IoError("ground-truth directory " + gt.string() + " does not exist");
    for (const auto& e : fs::directory_iterator(gt)) {
      auto name = e.path().filename().string();
      for (const std::string ext : {".nii.gz", ".nii"})
        if (name.size() > ext.size() && name.ends_with(ext)) {
          name.resize(name.size() - ext.size());
          if (name.ends_with("_label")) out.emplace_back(name.substr(0, name.size() - 6), e.path());
          break;
        }
    }
    std::sort(out.begin(), out.end());
  }
  if (out.empty()) throw ValidationError("no ground-truth label maps in " + gt.string());
  return out;
}

std::optional<fs::path> prediction_file(const fs::path& dir, const std::string& id) {
  for (const auto& stem : {id + "_pred", id + "_label", id})
    for (const std::string ext : {".nii.gz", ".nii"})
      if (fs::exists(dir / (stem + ext))) return dir / (stem + ext);
  return std::nullopt;
}

json cmd_eval(const Options& o) {
  int64_t classes = o.classes;
  if (classes <= 0) classes = o.config.empty() ? 1 : resolve_config(o, "finetune").data.classes;
  const auto conn = connectivity_from_int(o.connectivity);
  // Subjects without a prediction are listed, not scored.
  std::vector<CaseMetrics> cases;
  std::vector<std::string> unscored;
  for (const auto& [id, path] : ground_truth_files(o.gt)) {
    const auto pred_path = prediction_file(o.pred, id);
    if (!pred_path) {
      unscored.push_back(id);
      continue;
    }
    const auto gt_map = read_nifti(path);
    const auto gt = seg_mask_from_label_map(gt_map, classes);
    const auto pred = seg_mask_from_label_map(read_nifti(*pred_path), classes);
    if (!(pred.dims() == gt.dims()))
      throw ValidationError("prediction for " + id + " is " + to_string(pred.dims()) + ", ground truth is " +
                            to_string(gt.dims()));
    cases.push_back(evaluate_masks(pred, gt, gt_map.spacing(), conn, id));
  }
  if (cases.empty()) throw ValidationError("no predictions in " + o.pred + " match the ground truth in " + o.gt);
  write_report(cases, o.out, "metrics");
  write_manifest(o.out, {{"subcommand", "eval"},
                         {"args",
                          {{"pred", fs::absolute(o.pred).string()},
                           {"gt", fs::absolute(o.gt).string()},
                           {"classes", classes},
                           {"connectivity", o.connectivity}}},
                         {"unscored", unscored},
                         {"versions", versions()}});
  const auto report = aggregate_report(cases);
  return {{"cases", cases.size()},
          {"unscored", unscored.size()},
          {"dice", report.dice.mean},
          {"lesion_f1", report.lesion_f1.mean}};
}

json cmd_fewshot(const Options& o) {
  const auto cfg = resolve_config(o, "finetune");
  const auto cases = load_labeled(diseased_dir(cfg), cfg.data, cfg.data.diseased_modalities);
  auto [pool, test] = split_tail(cases, cfg.data.n_test);
  if (test.empty()) throw ValidationError("few-shot needs data.n_test > 0 held-out cases");
  const auto init = load_checkpoint(o.init_from);
  const auto tc = cfg.train("finetune");
  write_manifest(o.out, manifest("fewshot", o, cfg, {{"pool_ids", ids_of(pool)}, {"test_ids", ids_of(test)}}));
  const auto grid = run_fewshot(
      ids_of(pool), cfg.data.fractions, cfg.data.repeats, tc.batch_size, tc.seed,
      [&](const std::string& arm, const std::vector<std::string>& subset, uint64_t seed) {
        const Checkpoint* from = arm == "pretrained" ? &init : nullptr;
        return run_finetune(cfg, pick(pool, subset), {}, test, from, o.strict_encoder, "", seed).test_dice;
      });
  write_text(fs::path(o.out) / "fewshot.csv", grid.csv());
  write_text(fs::path(o.out) / "fewshot_summary.csv", grid.summary_csv());
  write_text(fs::path(o.out) / "fewshot.svg", tools::fewshot_svg(grid.summary));
  json subsets = json::array();
  for (const auto& r : grid.runs)
    if (r.arm == "pretrained") subsets.push_back({{"fraction", r.fraction}, {"repeat", r.repeat}, {"ids", r.subset}});
  write_text(fs::path(o.out) / "fewshot_subsets.json", subsets.dump(2) + "\n");
  json summary = json::array();
  for (const auto& s : grid.summary) summary.push_back({{"fraction", s.fraction}, {"arm", s.arm}, {"mean", s.mean}});
  return {{"summary", summary}};
}

json cmd_cv(const Options& o) {
  const auto cfg = resolve_config(o, "finetune");
  const auto cases = load_labeled(diseased_dir(cfg), cfg.data, cfg.data.diseased_modalities);
  const auto ids = ids_of(cases);
  const auto tc = cfg.train("finetune");
  const auto split = cfg.data.split_file.empty() ? make_folds(ids, cfg.data.folds, tc.seed)
                                                  : load_split(cfg.data.split_file);
  const auto init = init_checkpoint(o);
  save_split(split, fs::path(o.out) / "split.json");
  write_manifest(o.out, manifest("cv", o, cfg, {{"folds", split.folds.size()}}));
  const auto class_names = cases.front().mask.class_names();
  const auto table = run_cv(ids, split, class_names,
                            [&](int64_t fold, const std::vector<std::string>& train_ids,
                                const std::vector<std::string>& eval_ids) {
                              auto [train, val] = split_tail(pick(cases, train_ids), cfg.data.n_val);
                              const auto dir = fs::path(o.out) / ("fold" + std::to_string(fold + 1));
                              auto r = run_finetune(cfg, train, val, pick(cases, eval_ids), init ? &*init : nullptr,
                                                    o.strict_encoder, dir);
                              write_report(r.test, dir, "fold_metrics");
                              return r.test;
                            });
  write_text(fs::path(o.out) / "cv.csv", table.csv());
  return {{"average_dice", table.rows.back().dice_mean}};
}

json cmd_report(const Options& o) {
  json out = json::object();
  if (!o.runlog.empty()) {
    const auto log = RunLog::load(o.runlog);
    write_text(fs::path(o.out) / "loss_curve.svg", tools::loss_curve_svg(log));
    out["runlog"] = tools::runlog_summary(log);
  }
  if (!o.fewshot.empty()) {
    const auto summary = tools::parse_fewshot_summary(read_text(o.fewshot));
    write_text(fs::path(o.out) / "fewshot.svg", tools::fewshot_svg(summary));
    json rows = json::array();
    for (const auto& s : summary) rows.push_back({{"fraction", s.fraction}, {"arm", s.arm}, {"mean", s.mean}, {"std", s.std}});
    out["fewshot"] = rows;
  }
  if (out.empty()) throw ValidationError("report needs --runlog and/or --fewshot");
  write_text(fs::path(o.out) / "report.json", out.dump(2) + "\n");
  return out;
}

void fail(const std::string& kind, const std::string& message, const std::string& sub) {
  json e = {{"error", {{"kind", kind}, {"message", message}}}};
  if (!sub.empty()) e["error"]["subcommand"] = sub;
  std::cerr << e.dump() << std::endl;
}

std::string config_keys_help() {
  std::string s = "\nConfig keys (JSON blocks; --override a.b=value, last wins):\n";
  for (const auto& k : experiment_keys()) s += "  " + k + "\n";
  s += "Train presets:";
  for (const auto& p : TrainConfig::preset_names()) s += " " + p;
  return s + "\nData root: data.root, else $BRAINSSL_DATA_ROOT, else the working directory.\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised 3D brain MRI pretraining and segmentation", "brainssl"};
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", BRAINSSL_VERSION);
  Options o;

  auto config_opts = [&](CLI::App* s) {
    s->add_option("--config", o.config, "Experiment config (JSON) or a run manifest")->check(CLI::ExistingFile);
    s->add_option("--override", o.overrides, "Dotted key=value override, repeatable")->take_all()->allow_extra_args(false);
    s->add_option("--seed", o.seed, "Seed for this stage (train.<stage>.seed)");
    s->footer(config_keys_help());
  };
  auto out_opt = [&](CLI::App* s) { s->add_option("--out", o.out, "Output directory")->required(); };

  auto* gen = app.add_subcommand("phantom-gen", "Write a synthetic phantom dataset (NIfTI + manifest.json)");
  out_opt(gen);
  gen->add_option("--n", o.n, "Number of subjects")->check(CLI::PositiveNumber);
  gen->add_flag("--diseased", o.diseased, "Add lesions and nested label maps");
  gen->add_option("--grid", o.grid, "Grid size D H W")->expected(3);
  gen->add_option("--modalities", o.modalities, "Channels per subject")->check(CLI::Range(1, 4));
  gen->add_option("--lesion-radius", o.lesion_radius, "Lesion radius range (voxels)")->expected(2);
  gen->add_option("--n-lesions", o.n_lesions, "Lesion count range")->expected(2);
  gen->add_option("--noise", o.noise, "Gaussian noise sigma");
  gen->add_option("--seed", o.seed, "Seed of the first subject");

  std::vector<CLI::App*> stages;
  for (const std::string name : {"pretrain1", "pretrain2", "finetune"}) {
    const std::string what = name == "pretrain1"   ? "Self-supervised pretraining on the healthy cohort"
                              : name == "pretrain2" ? "Self-supervised pretraining on the diseased images"
                                                    : "Supervised fine-tuning with held-out test scoring";
    auto* s = app.add_subcommand(name, what);
    config_opts(s);
    out_opt(s);
    s->add_option("--init-from", o.init_from, "Checkpoint to start from")->check(CLI::ExistingFile);
    s->add_flag("--strict-encoder", o.strict_encoder, "Fail unless every encoder tensor transfers");
    stages.push_back(s);
  }

  auto* ev = app.add_subcommand("eval", "Score predicted label maps against ground truth");
  out_opt(ev);
  ev->add_option("--pred", o.pred, "Directory of predicted label maps")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--gt", o.gt, "Dataset directory or directory of <id>_label maps")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--classes", o.classes, "Number of nested classes (default: data.classes from --config, else 1)");
  ev->add_option("--connectivity", o.connectivity, "Lesion connectivity")->check(CLI::IsMember({6, 26}));
  ev->add_option("--config", o.config, "Experiment config for data.classes")->check(CLI::ExistingFile);

  auto* few = app.add_subcommand("fewshot", "Pretrained vs scratch fine-tuning on seeded fractions");
  config_opts(few);
  out_opt(few);
  few->add_option("--init-from", o.init_from, "Pretrained checkpoint for the pretrained arm")
      ->required()
      ->check(CLI::ExistingFile);
  few->add_flag("--strict-encoder", o.strict_encoder, "Fail unless every encoder tensor transfers");

  auto* cv = app.add_subcommand("cv", "K-fold cross-validation of fine-tuning");
  config_opts(cv);
  out_opt(cv);
  cv->add_option("--init-from", o.init_from, "Checkpoint to fine-tune from")->check(CLI::ExistingFile);
  cv->add_flag("--strict-encoder", o.strict_encoder, "Fail unless every encoder tensor transfers");

  auto* rep = app.add_subcommand("report", "Loss-curve and few-shot plots with summary statistics");
  out_opt(rep);
  rep->add_option("--runlog", o.runlog, "runlog.csv from a training stage")->check(CLI::ExistingFile);
  rep->add_option("--fewshot", o.fewshot, "fewshot_summary.csv from the fewshot subcommand")->check(CLI::ExistingFile);

  std::string sub;
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail("usage", e.what(), app.get_subcommands().empty() ? "" : app.get_subcommands().front()->get_name());
    return kExitUsage;
  }
  sub = app.get_subcommands().front()->get_name();

  try {
    json result;
    fs::create_directories(o.out);
    if (sub == "phantom-gen") result = cmd_phantom_gen(o);
    else if (sub == "pretrain1" || sub == "pretrain2") result = cmd_pretrain(sub, o);
    else if (sub == "finetune") result = cmd_finetune(o);
    else if (sub == "eval") result = cmd_eval(o);
    else if (sub == "fewshot") result = cmd_fewshot(o);
    else if (sub == "cv") result = cmd_cv(o);
    else result = cmd_report(o);
    std::cout << json{{"status", "ok"}, {"subcommand", sub}, {"out", o.out}, {"result", result}}.dump() << std::endl;
    return 0;
  } catch (const Error& e) {
    fail(e.kind(), e.what(), sub);
  } catch (const std::exception& e) {
    fail("internal", e.what(), sub);
  }
  return kExitValidation;
}
