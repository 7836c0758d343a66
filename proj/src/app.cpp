#include "ptadet/app.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "ptadet/errors.hpp"
#include "ptadet/pipeline.hpp"
#include "ptadet/suites.hpp"

namespace ptadet {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string num(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

std::string csv_row(std::initializer_list<std::string> fields) {
  std::string line;
  bool first = true;
  for (const auto& f : fields) {
    if (!first) line += ',';
    line += csv_field(f);
    first = false;
  }
  return line + "\n";
}

std::string abs_path(const std::string& p) { return p.empty() ? p : fs::absolute(p).lexically_normal().string(); }

struct Globals {
  std::string preset = "desk";
  std::string config;
  std::string out = "ptadet_out";
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
};

PipelineConfig resolve_config(const Globals& g) {
  PipelineConfig cfg;
  if (g.preset == "desk")
    cfg = PipelineConfig::desk();
  else if (g.preset == "paper")
    cfg = PipelineConfig::paper();
  else
    throw ConfigError("unknown preset '" + g.preset + "' (expected desk|paper)");
  if (!g.config.empty()) cfg = parse_config(read_text_file(g.config), cfg);
  for (const std::string& kv : g.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (g.seed) cfg.seed = *g.seed;
  cfg.validate();
  return cfg;
}

json config_json(const PipelineConfig& cfg) {
  json j = json::object();
  for (const auto& k : config_keys()) j[k] = get_config_value(cfg, k);
  return j;
}

/// Output directory plus the manifest written ahead of any result file.
class RunContext {
 public:
  RunContext(const Globals& g, PipelineConfig cfg) : out_(g.out), preset_(g.preset), cfg_(std::move(cfg)) {}

  const PipelineConfig& cfg() const { return cfg_; }
  fs::path path(const std::string& name) const { return out_ / name; }

  /// `command_args` are the subcommand name and its resolved options.
  void write_manifest(const std::vector<std::string>& command_args, const std::vector<json>& extra = {}) const {
    std::vector<std::string> argv{"--preset", preset_};
    for (const auto& k : config_keys()) {
      argv.push_back("--set");
      argv.push_back(k + "=" + get_config_value(cfg_, k));
    }
    argv.insert(argv.end(), command_args.begin(), command_args.end());
    json run;
    run["kind"] = "run";
    run["command"] = command_args.front();
    run["argv"] = argv;
    run["seed"] = cfg_.seed;
    run["config"] = config_json(cfg_);
    run["versions"] = {{"ptadet", kVersion},
                       {"compiler", __VERSION__},
                       {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                     std::to_string(EIGEN_MINOR_VERSION)}};
    std::string text = run.dump() + "\n";
    for (const json& e : extra) text += e.dump() + "\n";
    fs::create_directories(out_);
    write_text_file(path("manifest.jsonl"), text);
  }

  void write(const std::string& name, const std::string& text) const { write_text_file(path(name), text); }

 private:
  fs::path out_;
  std::string preset_;
  PipelineConfig cfg_;
};

// ---- check ----------------------------------------------------------------------

int cmd_check(const RunContext& ctx, const std::string& checkpoint, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args{"check"};
  if (!checkpoint.empty()) args.insert(args.end(), {"--checkpoint", abs_path(checkpoint)});
  ctx.write_manifest(args);
  CheckOptions opt;
  opt.checkpoint = abs_path(checkpoint);
  opt.config = ctx.cfg();
  opt.seed = ctx.cfg().seed;
  std::string csv = "module,check,status,detail\n";
  std::size_t failed = 0;
  const auto results = run_checks(opt);
  for (const CheckResult& r : results) {
    csv += csv_row({r.module, r.name, r.pass ? "pass" : "fail", r.detail});
    if (!r.pass) {
      ++failed;
      err << "check failed: " << r.module << "/" << r.name << ": " << r.detail << "\n";
    }
  }
  ctx.write("check.csv", csv);
  out << results.size() - failed << "/" << results.size() << " checks passed\n";
  return failed ? kExitCheckFailure : kExitOk;
}

// ---- gradcheck ------------------------------------------------------------------

int cmd_gradcheck(const RunContext& ctx, const std::string& scope, std::ostream& out, std::ostream& err) {
  const auto cases = gradcheck_cases(scope, ctx.cfg().seed);
  ctx.write_manifest({"gradcheck", "--scope", scope});
  std::string csv = "scope,case,group,checked,max_abs_err,max_rel_err,status\n";
  std::size_t failed = 0, rows = 0;
  for (const GradcheckCase& c : cases) {
    for (const GradcheckRow& r : run_gradcheck_case(c)) {
      ++rows;
      csv += csv_row({r.scope, r.case_name, r.group, std::to_string(r.checked), num(r.max_abs_err), num(r.max_rel_err),
                      r.pass ? "pass" : "fail"});
      if (!r.pass) {
        ++failed;
        err << "gradcheck failed: " << r.case_name << " " << r.group << " rel err " << r.max_rel_err << "\n";
      }
    }
  }
  ctx.write("gradcheck.csv", csv);
  out << cases.size() << " cases, " << rows - failed << "/" << rows << " parameter groups within "
      << kGradcheckTolerance << "\n";
  return failed ? kExitCheckFailure : kExitOk;
}

// ---- overfit --------------------------------------------------------------------

void append_record(std::string& csv, const TrainRecord& r) {
  const std::string step = std::to_string(r.step);
  const std::pair<const char*, double> parts[] = {{"total", r.total},       {"depth", r.depth},
                                                  {"depth_bin", r.depth_bin}, {"depth_res", r.depth_res},
                                                  {"rpn", r.rpn},           {"rpn_cls", r.rpn_cls},
                                                  {"rpn_reg", r.rpn_reg},   {"rpn_vote", r.rpn_vote}};
  for (const auto& [name, v] : parts) csv += step + "," + name + "," + num(v) + "\n";
}

double best_bev_iou(const Box3D& box, std::span<const Box3D> gts) {
  double best = 0.0;
  for (const Box3D& g : gts) best = std::max(best, iou_bev(box, g));
  return best;
}

int cmd_overfit(const RunContext& ctx, std::ostream& out) {
  ctx.write_manifest({"overfit"});
  const PipelineConfig& cfg = ctx.cfg();
  const std::vector<PreparedScene> scenes = make_training_scenes(cfg);
  Detector det = Detector::init(cfg);
  std::string log = "step,component,value\n";
  const auto records = train(det, scenes, [&](const TrainRecord& r) {
    append_record(log, r);
    if (r.step == 1 || r.step % 20 == 0 || r.step == cfg.steps) out << "step " << r.step << " total " << r.total << "\n";
  });
  ctx.write("train_log.csv", log);
  save_checkpoint(ctx.path("checkpoint.bin"), det.params());

  double final_total = 0.0;
  std::vector<DetectionResult> dets;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const ForwardResult f = detector_forward(det, scenes[i]);
    final_total += detector_loss(det, scenes[i], f).total.item() / static_cast<double>(scenes.size());
    if (i == 0) dets = detect(det, f, cfg.nms_test);
  }
  std::ostringstream ds, gs;
  write_detections(ds, dets);
  write_ground_truth(gs, scenes[0].scene.gts);
  ctx.write("detections.txt", ds.str());
  ctx.write("ground_truth.txt", gs.str());

  const double initial = records.empty() ? final_total : records.front().total;
  const double top_iou = dets.empty() ? 0.0 : best_bev_iou(dets.front().box, scenes[0].gt_boxes);
  std::string summary = "metric,value\n";
  summary += "steps," + std::to_string(cfg.steps) + "\n";
  summary += "initial_total," + num(initial) + "\n";
  summary += "last_logged_total," + num(records.empty() ? initial : records.back().total) + "\n";
  summary += "final_total," + num(final_total) + "\n";
  summary += "loss_drop_fraction," + num(initial > 0 ? 1.0 - final_total / initial : 0.0) + "\n";
  summary += "num_detections," + std::to_string(dets.size()) + "\n";
  summary += "top_score," + num(dets.empty() ? 0.0 : dets.front().score) + "\n";
  summary += "top_bev_iou," + num(top_iou) + "\n";
  ctx.write("summary.csv", summary);
  out << "final total " << final_total << ", " << dets.size() << " detections, top BEV IoU " << top_iou << "\n";
  return kExitOk;
}

// ---- eval -----------------------------------------------------------------------

struct EvalArgs {
  std::vector<std::string> detections;
  std::vector<std::string> ground_truth;
  std::string checkpoint;
  std::optional<std::size_t> scenes;
  std::string iou_kind = "3d";
};

std::string ap_table(std::span<const FrameEval> frames, IouKind kind) {
  std::string csv = "class,difficulty,iou_kind,iou_threshold,ap,num_gt,num_tp,num_fp,defined\n";
  const std::string kind_name = kind == IouKind::k3d ? "3d" : "bev";
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const auto cls = static_cast<ObjectClass>(c);
    const double thr = default_iou_threshold(cls);
    double sum = 0.0;
    std::size_t defined = 0;
    for (Difficulty d : {Difficulty::kEasy, Difficulty::kModerate, Difficulty::kHard}) {
      const ApResult r = average_precision_40(frames, cls, thr, d, kind);
      csv += csv_row({std::string(class_name(cls)), std::string(difficulty_name(d)), kind_name, num(thr), num(r.ap),
                      std::to_string(r.num_gt), std::to_string(r.num_tp), std::to_string(r.num_fp),
                      r.defined ? "1" : "0"});
      if (r.defined) {
        sum += r.ap;
        ++defined;
      }
    }
    csv += csv_row({std::string(class_name(cls)), "mAP", kind_name, num(thr),
                    num(defined ? sum / static_cast<double>(defined) : 0.0), "", "", "", defined ? "1" : "0"});
  }
  return csv;
}

int cmd_eval(const RunContext& ctx, const EvalArgs& a, std::ostream& out) {
  IouKind kind;
  if (a.iou_kind == "3d")
    kind = IouKind::k3d;
  else if (a.iou_kind == "bev")
    kind = IouKind::kBev;
  else
    throw ConfigError("--iou-kind must be 3d or bev");
  const bool from_files = !a.detections.empty() || !a.ground_truth.empty();
  if (from_files == !a.checkpoint.empty())
    throw ConfigError("eval needs either --detections/--ground-truth pairs or --checkpoint");
  if (from_files && a.detections.size() != a.ground_truth.size())
    throw ConfigError("eval: --detections and --ground-truth must be given the same number of times");

  std::vector<std::string> args{"eval", "--iou-kind", a.iou_kind};
  for (std::size_t i = 0; i < a.detections.size(); ++i)
    args.insert(args.end(), {"--detections", abs_path(a.detections[i]), "--ground-truth", abs_path(a.ground_truth[i])});
  if (!a.checkpoint.empty()) args.insert(args.end(), {"--checkpoint", abs_path(a.checkpoint)});
  if (a.scenes) args.insert(args.end(), {"--scenes", std::to_string(*a.scenes)});
  ctx.write_manifest(args);

  std::vector<FrameEval> frames;
  if (from_files) {
    for (std::size_t i = 0; i < a.detections.size(); ++i) {
      std::istringstream ds(read_text_file(a.detections[i])), gs(read_text_file(a.ground_truth[i]));
      frames.push_back({read_detections(ds), read_ground_truth(gs)});
    }
  } else {
    PipelineConfig cfg = ctx.cfg();
    if (a.scenes) cfg.scenes = *a.scenes;
    Detector det = Detector::init(cfg);
    load_checkpoint(a.checkpoint, det.params());
    const auto scenes = make_training_scenes(cfg);
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      const ForwardResult f = detector_forward(det, scenes[i]);
      FrameEval fe{detect(det, f, cfg.nms_test), scenes[i].scene.gts};
      std::ostringstream ds, gs;
      write_detections(ds, fe.dets);
      write_ground_truth(gs, fe.gts);
      ctx.write("frames/detections_" + std::to_string(i) + ".txt", ds.str());
      ctx.write("frames/ground_truth_" + std::to_string(i) + ".txt", gs.str());
      frames.push_back(std::move(fe));
    }
  }
  const std::string table = ap_table(frames, kind);
  ctx.write("ap.csv", table);
  out << table;
  return kExitOk;
}

// ---- ablate ---------------------------------------------------------------------

using Overrides = std::vector<std::pair<std::string, std::string>>;

struct AxisValue {
  std::string label;
  Overrides overrides;
};

std::vector<AxisValue> axis_values(const std::string& axis, const PipelineConfig& cfg) {
  if (axis == "combine")
    return {{"subtract", {{"net.combine", "subtract"}}},
            {"add", {{"net.combine", "add"}}},
            {"concat", {{"net.combine", "concat"}}}};
  if (axis == "attn") {
    // (PTD, PTU, PFT) with - for subtraction and x for multiplication
    std::vector<AxisValue> out;
    for (const char* combo : {"---", "xxx", "xx-", "--x"}) {
      auto mode = [&](int i) { return std::string(combo[i] == 'x' ? "multiply" : "subtract"); };
      out.push_back({combo, {{"net.attn_ptd", mode(0)}, {"net.attn_ptu", mode(1)}, {"net.attn_pft", mode(2)}}});
    }
    return out;
  }
  if (axis == "sampling") return {{"kps", {{"net.sampling", "kps"}}}, {"fps", {{"net.sampling", "fps"}}}};
  if (axis == "links") {
    const std::size_t n = cfg.net.num_stages();
    auto links = [n](bool on) {
      std::string s;
      for (std::size_t i = 0; i < n; ++i) s += std::string(i ? "," : "") + (on ? "1" : "0");
      return s;
    };
    return {{"on", {{"net.pft_links", links(true)}, {"net.final_fusion", "true"}}},
            {"off", {{"net.pft_links", links(false)}, {"net.final_fusion", "false"}}}};
  }
  throw ConfigError("unknown ablation axis '" + axis + "' (expected combine|attn|sampling|links)");
}

std::uint64_t forward_hash(const ForwardResult& f) {
  std::vector<double> v;
  for (const Tensor* t : {&f.fused, &f.rpn.vote_offsets, &f.rpn.scores, &f.rpn.residuals})
    v.insert(v.end(), t->data().begin(), t->data().end());
  return hash_values(v);
}

int cmd_ablate(const RunContext& ctx, const std::vector<std::string>& axes, std::size_t steps, std::ostream& out) {
  if (axes.empty()) throw ConfigError("ablate needs at least one --axis");
  const PipelineConfig& base = ctx.cfg();
  std::vector<std::vector<AxisValue>> values;
  for (const auto& a : axes) values.push_back(axis_values(a, base));

  struct Cell {
    std::string label;
    PipelineConfig cfg;
    json overrides = json::object();
  };
  std::vector<Cell> cells{{"", base}};
  for (std::size_t ai = 0; ai < axes.size(); ++ai) {
    std::vector<Cell> next;
    for (const Cell& c : cells)
      for (const AxisValue& v : values[ai]) {
        Cell n = c;
        n.label += (n.label.empty() ? "" : ";") + axes[ai] + "=" + v.label;
        for (const auto& [k, val] : v.overrides) {
          set_config_value(n.cfg, k, val);
          n.overrides[k] = val;
        }
        next.push_back(std::move(n));
      }
    cells = std::move(next);
  }
  for (Cell& c : cells) {
    c.cfg.steps = steps;
    c.cfg.validate();
  }

  std::vector<std::string> args{"ablate", "--steps", std::to_string(steps)};
  for (const auto& a : axes) args.insert(args.end(), {"--axis", a});
  std::vector<json> extra;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    json j;
    j["kind"] = "cell";
    j["cell"] = i;
    j["label"] = cells[i].label;
    j["overrides"] = cells[i].overrides;
    j["config"] = config_json(cells[i].cfg);
    extra.push_back(std::move(j));
  }
  ctx.write_manifest(args, extra);

  const std::vector<PreparedScene> scenes = make_training_scenes(base);
  std::string csv = "cell,label,output_hash,total_loss,num_params\n";
  for (std::size_t i = 0; i < cells.size(); ++i) {
    Detector det = Detector::init(cells[i].cfg);
    if (steps > 0) train(det, scenes);
    const ForwardResult f = detector_forward(det, scenes[0]);
    const double loss = detector_loss(det, scenes[0], f).total.item();
    std::size_t n_params = 0;
    for (const auto& [name, t] : det.params()) n_params += t.numel();
    const std::string h = hex64(forward_hash(f));
    csv += csv_row({std::to_string(i), cells[i].label, h, num(loss), std::to_string(n_params)});
    out << cells[i].label << " " << h << " loss " << loss << "\n";
  }
  ctx.write("ablate.csv", csv);
  return kExitOk;
}

// ---- generate -------------------------------------------------------------------

int cmd_generate(const RunContext& ctx, std::size_t count, std::ostream& out) {
  ctx.write_manifest({"generate", "--count", std::to_string(count)});
  std::string index = "id,seed,points,objects\n";
  for (std::size_t i = 0; i < count; ++i) {
    SyntheticSceneSpec spec = ctx.cfg().scene;
    spec.seed = ctx.cfg().scene.seed + i;
    const SceneSample s = generate_scene(spec);
    char id[24];
    std::snprintf(id, sizeof id, "%06zu", i);
    write_scene(ctx.path(""), id, s);
    std::ostringstream gs;
    write_ground_truth(gs, s.gts);
    ctx.write("ground_truth/" + std::string(id) + ".txt", gs.str());
    index += csv_row({id, std::to_string(spec.seed), std::to_string(s.points.size()), std::to_string(s.gts.size())});
  }
  ctx.write("scenes.csv", index);
  out << "wrote " << count << " scenes to " << ctx.path("").string() << "\n";
  return kExitOk;
}

// ---- replay ---------------------------------------------------------------------

std::vector<std::string> manifest_argv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read manifest " + path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ConfigError("manifest " + path + ": " + e.what());
    }
    if (j.value("kind", "") == "run" && j.contains("argv")) return j["argv"].get<std::vector<std::string>>();
  }
  throw ConfigError("manifest " + path + " has no run record");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"PTA-Det reference implementation: checks, training, evaluation and ablations", "ptadet"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  Globals g;
  app.add_option("--preset", g.preset, "Base configuration (desk|paper)")->capture_default_str();
  app.add_option("--config", g.config, "key = value configuration file applied over the preset");
  app.add_option("--seed", g.seed, "Overrides the config seed");
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  app.add_option("--set", g.sets, "key=value override (repeatable)");

  std::string checkpoint;
  auto* check = app.add_subcommand("check", "Run every module's invariant checks");
  check->add_option("--checkpoint", checkpoint, "Also verify that this checkpoint loads");

  std::string scope = "all";
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  grad->add_option("--scope", scope, "op|stage|network|all")->capture_default_str();

  auto* overfit = app.add_subcommand("overfit", "Train the full pipeline on synthetic scenes");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "AP-40 table from detection files or a checkpoint");
  eval->add_option("--detections", ea.detections, "Detections file, one per frame (repeatable)");
  eval->add_option("--ground-truth", ea.ground_truth, "Ground-truth file paired with --detections (repeatable)");
  eval->add_option("--checkpoint", ea.checkpoint, "Evaluate this checkpoint on generated scenes");
  eval->add_option("--scenes", ea.scenes, "Number of generated scenes (default train.scenes)");
  eval->add_option("--iou-kind", ea.iou_kind, "3d|bev")->capture_default_str();

  std::vector<std::string> axes;
  std::size_t ablate_steps = 0;
  auto* ablate = app.add_subcommand("ablate", "Cartesian sweep over ablation switches");
  ablate->add_option("--axis", axes, "combine|attn|sampling|links (repeatable)");
  ablate->add_option("--steps", ablate_steps, "Training steps per cell before hashing")->capture_default_str();

  std::size_t count = 1;
  auto* generate = app.add_subcommand("generate", "Write synthetic scenes in KITTI layout");
  generate->add_option("--count", count, "Number of scenes")->capture_default_str();

  std::string manifest;
  auto* replay = app.add_subcommand("replay", "Rerun a command from its manifest into --out");
  replay->add_option("--manifest", manifest, "manifest.jsonl written by an earlier run")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfigError;
  }

  try {
    if (replay->parsed()) {
      std::vector<std::string> argv = manifest_argv(manifest);
      argv.insert(argv.begin(), {"--out", g.out});
      return run_cli(argv, out, err);
    }
    const RunContext ctx(g, resolve_config(g));
    if (check->parsed()) return cmd_check(ctx, checkpoint, out, err);
    if (grad->parsed()) return cmd_gradcheck(ctx, scope, out, err);
    if (overfit->parsed()) return cmd_overfit(ctx, out);
    if (eval->parsed()) return cmd_eval(ctx, ea, out);
    if (ablate->parsed()) return cmd_ablate(ctx, axes, ablate_steps, out);
    if (generate->parsed()) return cmd_generate(ctx, count, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitCheckFailure;
  }
  return kExitOk;
}

}  // namespace ptadet
