// SPDX-License-Identifier: Apache-2.0
#include "stcnet/checkpoint.hpp"
#include "stcnet/gradcheck.hpp"
#include "stcnet/run_config.hpp"

#include "json.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

namespace fs = std::filesystem;
using namespace stcnet;
using nlohmann::json;

namespace {

const char *kUsage = R"(usage: stcnet <command> [flags]

commands:
  gen-data   --out DIR [--data.* ...]            write a synthetic clip dataset
  train      --run-dir DIR [--config FILE] [--ablation AXIS] [--resume]
  transfer   --run-dir DIR [--config FILE]       2D->3D supervision transfer
  eval       --run-dir DIR [--data DIR] [--checkpoint FILE]
  gradcheck  [--target ops|stc-block|all] [--seed N]
  params     --arch NAME [--input CxTxHxW]       shape and parameter report

Any --section.key VALUE flag overrides the matching config entry
(sections: arch, optim, data, transfer, ablation). Config files are
INI-style: [section] headers, key = value, '#' comments.
)";

struct Args {
  std::string command;
  std::map<std::string, std::string> flags;
  std::vector<std::pair<std::string, std::string>> overrides; // ordered section.key flags
  bool has(const std::string &f) const { return flags.count(f) > 0; }
  std::string get(const std::string &f, const std::string &fallback = "") const {
    auto it = flags.find(f);
    return it == flags.end() ? fallback : it->second;
  }
  std::string require(const std::string &f) const {
    auto it = flags.find(f);
    if (it == flags.end()) throw UsageError("missing required flag --" + f);
    return it->second;
  }
};

const std::vector<std::string> kBoolFlags = {"resume", "no-strict", "free-form-stride"};

Args parse_args(int argc, char **argv) {
  if (argc < 2) throw UsageError("no command given");
  Args args;
  args.command = argv[1];
  for (int i = 2; i < argc; ++i) {
    std::string token = argv[i];
    if (token.rfind("--", 0) != 0) throw UsageError("unexpected argument '" + token + "'");
    std::string key = token.substr(2);
    std::string value;
    auto eq = key.find('=');
    bool has_value = false;
    if (eq != std::string::npos) {
      value = key.substr(eq + 1);
      key = key.substr(0, eq);
      has_value = true;
    }
    bool boolean = std::find(kBoolFlags.begin(), kBoolFlags.end(), key) != kBoolFlags.end();
    if (!has_value && !boolean) {
      if (i + 1 >= argc) throw UsageError("flag --" + key + " needs a value");
      value = argv[++i];
    }
    if (boolean && !has_value) value = "true";
    if (key.find('.') != std::string::npos)
      args.overrides.emplace_back(key, value);
    else
      args.flags[key] = value;
  }
  return args;
}

// Builds the run config from defaults, optional file, then flag overrides.
io::RunConfig resolve_config(const Args &args) {
  io::RunConfig cfg;
  if (args.has("config")) io::parse_config_file(cfg, args.get("config"));
  if (args.has("arch")) cfg.apply("arch.preset", args.get("arch"));
  if (args.has("input")) cfg.apply("arch.input", args.get("input"));
  if (args.has("seed")) {
    cfg.apply("optim.seed", args.get("seed"));
    cfg.apply("data.seed", args.get("seed"));
    cfg.apply("transfer.seed", args.get("seed"));
  }
  if (args.has("ablation")) cfg.apply("ablation.axis", args.get("ablation"));
  if (args.has("data")) cfg.apply("data.dir", args.get("data"));
  if (args.has("free-form-stride")) cfg.apply("ablation.free-form-stride", "true");
  for (const auto &[key, value] : args.overrides) cfg.apply(key, value);
  return cfg;
}

void write_echo(const io::RunConfig &cfg, const fs::path &run_dir) {
  fs::create_directories(run_dir);
  std::ofstream out(run_dir / "config.echo");
  out << cfg.echo();
}

synth::Dataset load_or_generate(const io::RunConfig &cfg, std::ostream &log) {
  if (!cfg.data_dir.empty() && fs::exists(fs::path(cfg.data_dir) / "index.tsv")) {
    log << "loading dataset from " << cfg.data_dir << "\n";
    return synth::read_dataset(cfg.data_dir);
  }
  log << "generating synthetic dataset (seed " << cfg.data.seed << ")\n";
  return synth::generate(cfg.data);
}

void write_summary(const fs::path &run_dir, const json &summary) {
  std::ofstream out(run_dir / "summary.json");
  out << summary.dump(2) << "\n";
}

// ------------------------------- commands ------------------------------------

int cmd_gen_data(const Args &args) {
  auto cfg = resolve_config(args);
  std::string out_dir = args.has("out") ? args.get("out") : cfg.data_dir;
  if (out_dir.empty()) throw UsageError("gen-data needs --out DIR");
  auto dataset = synth::generate(cfg.data);
  synth::write_dataset(dataset, out_dir);
  write_echo(cfg, out_dir);
  std::cout << "wrote " << dataset.train.size() << " train / " << dataset.val.size()
            << " val clips (" << dataset.num_classes << " classes) to " << out_dir << "\n";
  return 0;
}

int cmd_params(const Args &args) {
  auto cfg = resolve_config(args);
  if (!args.has("arch") && !args.has("config") && args.overrides.empty())
    throw UsageError("params needs --arch NAME (or explicit [arch] config)");
  auto arch = cfg.arch;
  arch.resolve();

  auto rows = nets::shape_check(arch);
  auto report = nets::param_count(arch);

  std::printf("arch: %s\n", args.has("arch") ? args.get("arch").c_str()
                                             : nets::family_name(arch.family));
  std::printf("input (CxTxHxW): %lldx%lldx%lldx%lld\n",
              static_cast<long long>(arch.input_dims[0]),
              static_cast<long long>(arch.input_dims[1]),
              static_cast<long long>(arch.input_dims[2]),
              static_cast<long long>(arch.input_dims[3]));
  std::printf("cardinality: %d\n", arch.cardinality);
  std::printf("%-12s %-16s %-10s %-16s %-14s\n", "layer", "output (HxWxT)", "channels",
              "backbone params", "stc params");
  for (size_t i = 0; i < rows.size(); ++i) {
    char shape[64];
    std::snprintf(shape, sizeof(shape), "%lldx%lldx%lld", static_cast<long long>(rows[i].h),
                  static_cast<long long>(rows[i].w), static_cast<long long>(rows[i].t));
    std::printf("%-12s %-16s %-10lld %-16lld %-14lld\n", rows[i].layer.c_str(), shape,
                static_cast<long long>(rows[i].channels),
                static_cast<long long>(report.rows[i].backbone),
                static_cast<long long>(report.rows[i].stc));
  }
  std::printf("backbone total: %lld\n", static_cast<long long>(report.backbone_total));
  std::printf("stc total: %lld\n", static_cast<long long>(report.stc_total));
  std::printf("total: %lld\n", static_cast<long long>(report.total()));

  auto model = nets::Model::build(arch, args.has("seed") ? std::stoull(args.get("seed")) : 0);
  int64_t recount = nets::recount_parameters(model);
  bool match = recount == report.total();
  std::printf("recount: %lld (%s)\n", static_cast<long long>(recount),
              match ? "match" : "MISMATCH");
  return match ? 0 : 1;
}

int cmd_gradcheck(const Args &args) {
  std::string target = args.get("target", "all");
  uint64_t seed = args.has("seed") ? std::stoull(args.get("seed")) : 0;
  std::vector<gradcheck::OpReport> reports;
  if (target == "ops" || target == "all") {
    auto ops_reports = gradcheck::check_ops(seed);
    reports.insert(reports.end(), ops_reports.begin(), ops_reports.end());
  }
  if (target == "stc-block" || target == "all") reports.push_back(gradcheck::check_stc_block(seed));
  if (reports.empty())
    throw UsageError("gradcheck target must be ops, stc-block or all, got '" + target + "'");

  bool all_pass = true;
  for (const auto &r : reports) {
    std::printf("%-24s max rel err %.3e  %s\n", r.name.c_str(), r.max_rel_err,
                r.pass ? "PASS" : "FAIL");
    all_pass = all_pass && r.pass;
  }
  std::printf("gradcheck %s at tolerance %.0e\n", all_pass ? "PASS" : "FAIL",
              gradcheck::kRelTol);
  return all_pass ? 0 : 1;
}

int cmd_train(const Args &args) {
  auto cfg = resolve_config(args);
  fs::path run_dir = args.get("run-dir", "run");
  write_echo(cfg, run_dir);
  uint64_t digest = cfg.digest();
  auto dataset = load_or_generate(cfg, std::cout);
  train::validate_stride(cfg.clip_stride, cfg.free_form_stride);

  if (cfg.ablation_axis != train::AblationAxis::None) {
    auto result = train::run_experiment(cfg.arch, cfg.optim, cfg.data, cfg.ablation_axis,
                                        run_dir.string(), &std::cout);
    json rows = json::array();
    for (const auto &row : result.rows)
      rows.push_back({{"setting", row.setting},
                      {"train_loss", row.train_loss},
                      {"train_acc", row.train_acc},
                      {"val_loss", row.val_loss},
                      {"val_acc", row.val_acc},
                      {"epochs_run", row.epochs_run}});
    write_summary(run_dir, json{{"command", "train"},
                                {"ablation", train::axis_name(cfg.ablation_axis)},
                                {"config_digest", digest},
                                {"rows", rows},
                                {"ablation_csv", result.ablation_csv}});
    std::cout << "ablation rows written to " << result.ablation_csv << "\n";
    return 0;
  }

  auto model = nets::Model::build(cfg.arch, cfg.optim.seed);
  train::SgdOptimizer optimizer(model.parameters(), cfg.optim);
  train::TrainState state;
  fs::path ckpt = run_dir / "checkpoint.stcn";
  if (args.has("resume")) {
    if (!fs::exists(ckpt)) throw DataError("resume requested but no checkpoint at " + ckpt.string());
    auto cp = io::load_checkpoint(ckpt.string(),
                                  args.has("no-strict") ? std::nullopt
                                                        : std::optional<uint64_t>(digest));
    io::restore_training(cp, model, &optimizer, &state);
    std::cout << "resumed from epoch " << state.next_epoch << "\n";
  }

  train::TrainOptions options;
  options.clip_stride = cfg.clip_stride;
  options.csv_path = (run_dir / "train_log.csv").string();
  options.log = &std::cout;
  options.on_epoch_end = [&](int, const train::TrainState &st) {
    io::save_checkpoint(io::snapshot_training(model, &optimizer, &st, digest), ckpt.string());
  };
  auto record = train::train_model(model, optimizer, dataset, cfg.optim, options, &state);
  if (record.epochs.empty()) {
    std::cout << "nothing to do: checkpoint already at epoch " << state.next_epoch << " of "
              << cfg.optim.max_epochs << "\n";
    return 0;
  }

  const auto &last = record.last();
  write_summary(run_dir, json{{"command", "train"},
                              {"config_digest", digest},
                              {"seed", cfg.optim.seed},
                              {"epochs_run", record.epochs.size() + static_cast<size_t>(
                                                 record.epochs.empty() ? 0 : record.epochs.front().epoch)},
                              {"train_loss", last.train_loss},
                              {"train_acc", last.train_acc},
                              {"val_loss", last.val_loss},
                              {"val_acc", last.val_acc},
                              {"reached_targets", record.reached_targets}});
  std::cout << "final train_acc " << last.train_acc << " val_acc " << last.val_acc << "\n";
  return 0;
}

int cmd_eval(const Args &args) {
  fs::path run_dir = args.get("run-dir", "");
  io::RunConfig cfg;
  if (args.has("config"))
    io::parse_config_file(cfg, args.get("config"));
  else if (!run_dir.empty() && fs::exists(run_dir / "config.echo"))
    io::parse_config_file(cfg, (run_dir / "config.echo").string());
  else
    throw UsageError("eval needs --config FILE or a --run-dir with config.echo");
  for (const auto &[key, value] : args.overrides) cfg.apply(key, value);
  if (args.has("data")) cfg.apply("data.dir", args.get("data"));

  std::string ckpt = args.has("checkpoint") ? args.get("checkpoint")
                                            : (run_dir / "checkpoint.stcn").string();
  auto model = nets::Model::build(cfg.arch, cfg.optim.seed);
  auto cp = io::load_checkpoint(ckpt, args.has("no-strict")
                                          ? std::nullopt
                                          : std::optional<uint64_t>(cfg.digest()));
  io::restore_training(cp, model, nullptr, nullptr);

  auto dataset = load_or_generate(cfg, std::cout);
  train::validate_stride(cfg.clip_stride, cfg.free_form_stride);
  auto val = train::evaluate_dataset(model, dataset.val, cfg.clip_stride);
  auto tr = train::evaluate_dataset(model, dataset.train, cfg.clip_stride);

  // temporal-necessity probe: the same videos with shuffled frame order;
  // a model that actually uses motion decays toward chance (report-only)
  std::vector<synth::VideoClip> shuffled;
  shuffled.reserve(dataset.val.size());
  for (const auto &video : dataset.val) {
    Rng rng(Rng::mix(0x5bf1e, video.video_id));
    shuffled.push_back(synth::shuffle_frames(video, rng));
  }
  auto val_shuffled = train::evaluate_dataset(model, shuffled, cfg.clip_stride);

  std::printf("train accuracy: %.6f (%zu videos)\n", tr.accuracy, dataset.train.size());
  std::printf("val accuracy: %.6f (%zu videos)\n", val.accuracy, dataset.val.size());
  std::printf("val accuracy on frame-shuffled copies: %.6f\n", val_shuffled.accuracy);
  return 0;
}

int cmd_transfer(const Args &args) {
  auto cfg = resolve_config(args);
  fs::path run_dir = args.get("run-dir", "transfer-run");
  write_echo(cfg, run_dir);
  uint64_t digest = cfg.digest();
  auto dataset = load_or_generate(cfg, std::cout);

  auto head_spec = transfer::MatchingHeadSpec::scaled(cfg.transfer.head_scale);
  auto student_arch = cfg.arch;
  student_arch.input_dims = {cfg.data.channels, cfg.data.frames, cfg.data.height,
                             cfg.data.width};
  student_arch.feature_dim = head_spec.student_dim;
  student_arch.num_classes = cfg.data.num_classes;

  auto teacher = transfer::Teacher2d::build(static_cast<int>(cfg.data.channels),
                                            cfg.data.height, cfg.data.width,
                                            head_spec.teacher_dim, 4,
                                            Rng::mix(cfg.transfer.seed, 0x7eac));
  auto student = nets::Model::build(student_arch, cfg.transfer.seed);
  auto head = transfer::MatchingHead::build(head_spec, Rng::mix(cfg.transfer.seed, 0x4ead));

  auto result = transfer::run_transfer(cfg.transfer, dataset, teacher, student, head,
                                       &std::cout);
  bool frozen_ok = result.teacher_checksum_before == result.teacher_checksum_after;
  std::printf("matching holdout accuracy: %.4f\n", result.holdout_accuracy);
  std::printf("teacher frozen: %s\n", frozen_ok ? "yes" : "NO");

  auto probe_transferred = transfer::probe_features(student, dataset, cfg.transfer.seed);
  auto random_student = nets::Model::build(student_arch, Rng::mix(cfg.transfer.seed, 0xdead));
  auto probe_random = transfer::probe_features(random_student, dataset, cfg.transfer.seed);
  {
    std::ofstream probe_csv(run_dir / "probe.csv");
    probe_csv << "student,probe_train_acc,probe_holdout_acc\n";
    char buf[128];
    std::snprintf(buf, sizeof(buf), "transferred,%.6f,%.6f\n", probe_transferred.train_accuracy,
                  probe_transferred.holdout_accuracy);
    probe_csv << buf;
    std::snprintf(buf, sizeof(buf), "random,%.6f,%.6f\n", probe_random.train_accuracy,
                  probe_random.holdout_accuracy);
    probe_csv << buf;
  }
  std::printf("probe: transferred %.4f vs random %.4f (holdout)\n",
              probe_transferred.holdout_accuracy, probe_random.holdout_accuracy);

  auto cp = io::snapshot_training(student, nullptr, nullptr, digest);
  for (const auto &p : head.parameters())
    cp.add("head", p.name, io::AnyTensor::from(p.var->value));
  for (const auto &p : teacher.parameter_view())
    cp.add("teacher", p.name, io::AnyTensor::from(p.var->value));
  for (const auto &b : teacher.buffer_view())
    cp.add("teacher", b.name, io::AnyTensor::from(*b.tensor));
  io::save_checkpoint(cp, (run_dir / "transfer_checkpoint.stcn").string());

  write_summary(run_dir,
                json{{"command", "transfer"},
                     {"config_digest", digest},
                     {"matching_holdout_accuracy", result.holdout_accuracy},
                     {"final_loss", result.final_loss},
                     {"steps", result.steps_run},
                     {"teacher_frozen", frozen_ok},
                     {"probe_transferred", probe_transferred.holdout_accuracy},
                     {"probe_random", probe_random.holdout_accuracy}});
  return frozen_ok ? 0 : 1;
}

int dispatch(const Args &args) {
  if (args.command == "gen-data") return cmd_gen_data(args);
  if (args.command == "train") return cmd_train(args);
  if (args.command == "transfer") return cmd_transfer(args);
  if (args.command == "eval") return cmd_eval(args);
  if (args.command == "gradcheck") return cmd_gradcheck(args);
  if (args.command == "params") return cmd_params(args);
  throw UsageError("unknown command '" + args.command + "'");
}

int exit_code_for(const Error &e) {
  const std::string &cat = e.category();
  if (cat == "usage") return 2;
  if (cat == "config") return 3;
  if (cat == "shape") return 4;
  if (cat == "data") return 5;
  if (cat == "format") return 6;
  if (cat == "numeric") return 7;
  if (cat == "compat") return 8;
  return 1;
}

} // namespace

int main(int argc, char **argv) {
  try {
    return dispatch(parse_args(argc, argv));
  } catch (const UsageError &e) {
    std::fprintf(stderr, "error usage: %s\n", e.what());
    std::fputs(kUsage, stderr);
    return 2;
  } catch (const Error &e) {
    std::fprintf(stderr, "error %s: %s\n", e.category().c_str(), e.what());
    return exit_code_for(e);
  } catch (const std::exception &e) {
    std::fprintf(stderr, "error internal: %s\n", e.what());
    return 1;
  }
}
