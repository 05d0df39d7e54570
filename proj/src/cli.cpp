#include "segattack/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "segattack/adapters.hpp"
#include "segattack/config.hpp"
#include "segattack/datax.hpp"
#include "segattack/evalx.hpp"
#include "segattack/seeding.hpp"
#include "segattack/simd/kernels.hpp"

namespace segattack::cli {
namespace fs = std::filesystem;
using nlohmann::json;

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::adapter:
    case ErrorKind::io:
    case ErrorKind::load:
      return kModelError;
    case ErrorKind::numeric:
    case ErrorKind::training:
    case ErrorKind::undefined_metric:
      return kNumericError;
    default:
      return kConfigError;
  }
}

namespace {

// Raw command-line values; applied on top of the config file.
struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string out;
  std::string data;
  std::optional<std::size_t> limit;
  std::vector<std::string> sources;
  std::vector<std::string> targets;
  std::vector<std::string> attacks;
  std::string epsilon, alpha, tau;
  std::optional<int> iterations;
  std::string layer;
  std::string loss_mode;
  std::string ref;
  std::string image;
  std::vector<std::string> grid;
  std::string preset;
  std::optional<int> train_images, eval_images;
  std::vector<std::string> models;
  bool all_toys = false;
  std::optional<int> epochs;
  std::string models_dir;
  std::string train_data, eval_data;
  bool no_images = false;
};

json model_refs(const std::vector<std::string>& refs) {
  json arr = json::array();
  for (const auto& r : refs) {
    const auto m = config::parse_model_ref(r);
    json e = {{"model", m.model_id}};
    if (m.weights) e["weights"] = m.weights->string();
    arr.push_back(e);
  }
  return arr;
}

json apply_overrides(json doc, const Overrides& o, bool want_attack) {
  if (!doc.is_object()) doc = json::object();
  if (o.seed) doc["seed"] = *o.seed;
  if (o.workers) doc["workers"] = *o.workers;
  if (!o.out.empty()) doc["out"] = o.out;
  if (!o.data.empty()) doc["data"]["root"] = o.data;
  if (o.limit) doc["data"]["limit"] = *o.limit;
  if (!o.sources.empty()) doc["sources"] = model_refs(o.sources);
  if (!o.targets.empty()) doc["targets"] = model_refs(o.targets);

  if (!o.attacks.empty()) {
    json old = doc.contains("attacks") ? doc["attacks"] : json::array();
    json fresh = json::array();
    for (const auto& name : o.attacks) {
      json pick = {{"name", name}};
      for (const auto& a : old) {
        if (a.value("name", std::string("fspgd")) == name) {
          pick = a;
          break;
        }
      }
      fresh.push_back(pick);
    }
    doc["attacks"] = fresh;
  }
  if (want_attack && (!doc.contains("attacks") || doc["attacks"].empty())) {
    doc["attacks"] = json::array({json{{"name", "fspgd"}}});
  }
  if (doc.contains("attacks") && doc["attacks"].is_array()) {
    for (auto& a : doc["attacks"]) {
      if (!o.epsilon.empty()) a["epsilon"] = config::parse_number(o.epsilon);
      if (!o.alpha.empty()) a["alpha"] = config::parse_number(o.alpha);
      if (!o.tau.empty()) a["tau"] = config::parse_number(o.tau);
      if (o.iterations) a["iterations"] = *o.iterations;
      if (!o.layer.empty()) a["layer"] = o.layer;
      if (!o.loss_mode.empty()) a["loss_mode"] = o.loss_mode;
    }
  }
  if (!o.ref.empty()) {
    const auto comma = o.ref.find(',');
    if (comma == std::string::npos) fail(ErrorKind::config, "--ref expects row,col");
    try {
      doc["simmap"]["ref"] = {std::stoi(o.ref.substr(0, comma)), std::stoi(o.ref.substr(comma + 1))};
    } catch (const std::exception&) {
      fail(ErrorKind::config, "--ref expects integers row,col");
    }
  }
  if (!o.image.empty()) doc["simmap"]["image"] = o.image;
  if (!o.grid.empty()) doc["sweep"]["grid"] = o.grid;
  if (!o.preset.empty()) doc["synth"]["preset"] = o.preset;
  if (o.train_images) doc["synth"]["train_images"] = *o.train_images;
  if (o.eval_images) doc["synth"]["eval_images"] = *o.eval_images;
  if (o.all_toys) doc["train"]["models"] = {"toy-cnn-a", "toy-cnn-b"};
  if (!o.models.empty()) doc["train"]["models"] = o.models;
  if (o.epochs) doc["train"]["epochs"] = *o.epochs;
  if (!o.models_dir.empty()) doc["train"]["out_dir"] = o.models_dir;
  if (!o.train_data.empty()) doc["train"]["data"] = o.train_data;
  if (!o.eval_data.empty()) doc["train"]["eval"] = o.eval_data;
  if (o.no_images) doc["report"]["save_images"] = false;
  return doc;
}

const json* lookup(const json& doc, const std::string& dotted) {
  const json* cur = &doc;
  std::string token;
  std::istringstream in(dotted);
  while (std::getline(in, token, '.')) {
    std::size_t idx = std::string::npos;
    const auto br = token.find('[');
    if (br != std::string::npos) {
      idx = std::stoul(token.substr(br + 1));
      token = token.substr(0, br);
    }
    if (!cur->contains(token)) return nullptr;
    cur = &(*cur)[token];
    if (idx != std::string::npos) {
      if (!cur->is_array() || idx >= cur->size()) return nullptr;
      cur = &(*cur)[idx];
    }
  }
  return cur;
}

class Context {
 public:
  Context(std::ostream& out, std::ostream& err) : out_(out), err_(err) {}

  config::RunConfig resolve(const Overrides& o, bool want_attack, const std::vector<std::string>& sections) {
    json doc = o.config.empty() ? json::object() : config::read_toml(o.config);
    doc = apply_overrides(std::move(doc), o, want_attack);
    config::RunConfig cfg = config::load_config(doc);
    const json echo = cfg.to_json();
    out_ << "segattack: kernels=" << simd::active().name << " seed=" << cfg.seed << " workers=" << cfg.workers
         << "\n";
    for (const auto& key : cfg.defaulted) {
      const bool relevant = std::any_of(sections.begin(), sections.end(), [&](const std::string& s) {
        return key == s || key.rfind(s + ".", 0) == 0 || key.rfind(s + "[", 0) == 0;
      });
      if (!relevant) continue;
      const json* v = lookup(echo, key);
      out_ << "  default " << key << " = " << (v ? v->dump() : "?") << "\n";
    }
    return cfg;
  }

  void log(const std::string& s) { out_ << s << std::endl; }
  std::ostream& out() { return out_; }
  std::ostream& err() { return err_; }

 private:
  std::ostream& out_;
  std::ostream& err_;
};

void write_json(const fs::path& path, const json& doc) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) fail(ErrorKind::io, "cannot write " + path.string());
  f << doc.dump(2) << '\n';
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) fail(ErrorKind::io, "cannot write " + path.string());
  f << text;
}

adapters::ModelAdapter load(const config::ModelRef& ref, std::uint64_t seed) {
  return adapters::load_model(ref.model_id, ref.weights, seed);
}

// Resolves every named attack layer on the source before any compute.
void check_layers(const adapters::ModelAdapter& source, const std::vector<evalx::AttackSpec>& attacks) {
  for (const auto& a : attacks) {
    if (!a.config.layer_id.empty()) source.layer_index(a.config.layer_id);
  }
}

std::vector<datax::Sample> dataset(const config::RunConfig& cfg, Context& ctx) {
  if (cfg.data_root.empty()) fail(ErrorKind::config, "no dataset given (data.root or --data)");
  const datax::DatasetManifest m =
      cfg.data_format == "voc" ? datax::load_voc(cfg.data_root) : datax::load_manifest(cfg.data_root);
  for (const auto& w : m.warnings) ctx.log("warning: " + w);
  auto samples = datax::load_samples(m, cfg.data_limit);
  ctx.log("dataset " + m.root.string() + ": " + std::to_string(samples.size()) + " image(s)");
  return samples;
}

evalx::TransferOptions transfer_options(const config::RunConfig& cfg, Context& ctx) {
  evalx::TransferOptions o;
  o.workers = cfg.workers;
  o.quantized = cfg.report.quantized;
  o.log = [&ctx](const std::string& s) { ctx.log(s); };
  return o;
}

std::string pct(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << 100.0 * v;
  return s.str();
}

int attack_cells_ok(const evalx::TransferMatrix& m) {
  int ok = 0;
  const std::size_t first = m.rows.size() > 1 ? 1 : 0;
  for (std::size_t r = first; r < m.rows.size(); ++r) {
    for (const auto& c : m.rows[r].cells) ok += c.ok ? 1 : 0;
  }
  return ok;
}

// ---- commands ---------------------------------------------------------------

int cmd_attack(const Overrides& o, Context& ctx) {
  config::RunConfig cfg = ctx.resolve(o, true, {"seed", "workers", "out", "data", "attacks", "report"});
  if (cfg.sources.size() != 1) fail(ErrorKind::config, "attack needs exactly one source model");
  if (cfg.attacks.size() != 1) fail(ErrorKind::config, "attack needs exactly one attack");
  const auto samples = dataset(cfg, ctx);
  const auto source = load(cfg.sources[0], cfg.seed);
  check_layers(source, cfg.attacks);
  const fs::path out = cfg.out;
  fs::create_directories(out);

  auto opts = transfer_options(cfg, ctx);
  std::vector<json> traces(samples.size());
  opts.on_trace = [&](std::size_t, std::size_t i, const attacker::AttackTrace& t) {
    if (cfg.report.save_images) datax::write_image(out / "adversarial" / (samples[i].stem + ".png"), t.adversarial);
    if (cfg.report.save_traces) {
      json tj = evalx::to_json(t);
      tj["image"] = samples[i].stem;
      write_json(out / "traces" / (samples[i].stem + ".json"), tj);
    }
  };
  const auto m = evalx::run_transfer({&source}, {&source}, cfg.attacks, samples, opts);
  const auto& clean = m.rows.at(0).cells.at(0);
  const auto& adv = m.rows.at(1).cells.at(0);
  json summary = {{"command", "attack"},
                  {"config", cfg.to_json()},
                  {"source", evalx::model_json(source)},
                  {"clean_miou", clean.ok ? json(clean.miou) : json(nullptr)},
                  {"adversarial_miou", adv.ok ? json(adv.miou) : json(nullptr)},
                  {"adversarial_miou_quantized",
                   adv.ok && adv.miou_quantized ? json(*adv.miou_quantized) : json(nullptr)},
                  {"matrix", m.to_json()}};
  write_json(out / "summary.json", summary);
  if (!adv.ok) {
    ctx.err() << "error: " << adv.error << "\n";
    return adv.error_kind ? exit_code_for(*adv.error_kind) : kAllCellsFailed;
  }
  ctx.log("clean mIoU " + pct(clean.miou) + "  adversarial mIoU " + pct(adv.miou) +
          (adv.miou_quantized ? "  (8-bit: " + pct(*adv.miou_quantized) + ")" : ""));
  ctx.log("wrote " + (out / "summary.json").string());
  return kOk;
}

int cmd_transfer(const Overrides& o, Context& ctx) {
  config::RunConfig cfg = ctx.resolve(o, false, {"seed", "workers", "out", "data", "attacks", "report"});
  if (cfg.targets.empty()) fail(ErrorKind::config, "transfer needs at least one target model");
  if (!cfg.attacks.empty() && cfg.sources.empty()) fail(ErrorKind::config, "transfer needs at least one source");
  const auto samples = dataset(cfg, ctx);
  std::vector<adapters::ModelAdapter> sources, targets;
  for (const auto& r : cfg.sources) {
    sources.push_back(load(r, cfg.seed));
    check_layers(sources.back(), cfg.attacks);
  }
  for (const auto& r : cfg.targets) targets.push_back(load(r, cfg.seed));
  std::vector<const adapters::ModelAdapter*> sp, tp;
  for (const auto& s : sources) sp.push_back(&s);
  for (const auto& t : targets) tp.push_back(&t);

  const auto m = evalx::run_transfer(sp, tp, cfg.attacks, samples, transfer_options(cfg, ctx));
  const fs::path out = cfg.out;
  json doc = m.to_json();
  doc["config"] = cfg.to_json();
  write_json(out / "transfer.json", doc);
  const std::string table = m.render_table();
  write_text(out / "transfer.txt", table);
  evalx::write_matrix_plot(out / "transfer.png", m);
  ctx.out() << table;
  for (const auto& row : m.rows) {
    for (const auto& c : row.cells) {
      if (!c.ok) ctx.err() << "cell " << row.label << " -> " << c.target << " failed: " << c.error << "\n";
    }
  }
  return (cfg.attacks.empty() ? m.succeeded_cells() > 0 : attack_cells_ok(m) > 0) ? kOk : kAllCellsFailed;
}

int cmd_sweep(const std::string& kind_text, const Overrides& o, Context& ctx) {
  config::RunConfig cfg = ctx.resolve(o, true, {"seed", "workers", "out", "data", "attacks", "sweep", "report"});
  const evalx::SweepKind kind = evalx::parse_sweep_kind(kind_text.empty() ? cfg.sweep.kind : kind_text);
  if (cfg.sources.size() != 1) fail(ErrorKind::config, "sweep needs exactly one source model");
  if (cfg.targets.empty()) fail(ErrorKind::config, "sweep needs at least one target model");
  const auto samples = dataset(cfg, ctx);
  const auto source = load(cfg.sources[0], cfg.seed);
  std::vector<adapters::ModelAdapter> targets;
  for (const auto& r : cfg.targets) targets.push_back(load(r, cfg.seed));
  std::vector<const adapters::ModelAdapter*> tp;
  for (const auto& t : targets) tp.push_back(&t);
  const auto grid = cfg.sweep.grid.empty() ? evalx::default_grid(kind, source) : cfg.sweep.grid;

  const auto table = evalx::sweep(kind, grid, cfg.attacks.at(0), source, tp, samples, transfer_options(cfg, ctx));
  const fs::path out = cfg.out;
  json doc = table.to_json();
  doc["config"] = cfg.to_json();
  const std::string stem = "sweep_" + evalx::to_string(kind);
  write_json(out / (stem + ".json"), doc);
  const std::string text = table.render_table();
  write_text(out / (stem + ".txt"), text);
  evalx::write_matrix_plot(out / (stem + ".png"), table.matrix);
  ctx.out() << text;
  return attack_cells_ok(table.matrix) > 0 ? kOk : kAllCellsFailed;
}

int cmd_simmap(const Overrides& o, Context& ctx) {
  config::RunConfig cfg = ctx.resolve(o, true, {"seed", "out", "data", "attacks", "simmap"});
  if (cfg.sources.size() != 1) fail(ErrorKind::config, "simmap needs exactly one source model");
  auto samples = dataset(cfg, ctx);
  if (!cfg.simmap.image.empty()) {
    std::erase_if(samples, [&](const datax::Sample& s) { return s.stem != cfg.simmap.image; });
    if (samples.empty()) fail(ErrorKind::config, "image '" + cfg.simmap.image + "' is not in the dataset");
  }
  if (cfg.simmap.limit > 0 && samples.size() > cfg.simmap.limit) samples.resize(cfg.simmap.limit);
  const auto source = load(cfg.sources[0], cfg.seed);
  evalx::AttackSpec spec = cfg.attacks.at(0);
  if (spec.name != "fspgd") fail(ErrorKind::config, "simmap attacks with fspgd");
  const std::string layer = spec.config.layer_id.empty() ? source.recommended_layer() : spec.config.layer_id;
  const fs::path out = cfg.out;

  json images = json::array();
  double drop_sum = 0.0;
  int drop_count = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    attacker::AttackConfig ac = spec.config;
    ac.layer_id = layer;
    ac.seed = derive_seed(spec.config.seed, i);
    const FeatureMap f_x = source.forward_with_features(s.image, layer).features;
    const auto trace = attacker::fspgd(source, s.image, ac);
    const FeatureMap f_a = source.forward_with_features(trace.adversarial, layer).features;

    std::vector<std::size_t> second;
    int fr = 0, fc = 0;
    if (cfg.simmap.ref) {
      fr = cfg.simmap.ref->first;
      fc = cfg.simmap.ref->second;
    } else {
      auto ref = evalx::two_instance_reference(s.labels, source.num_classes());
      if (!ref) {
        ctx.log("skip " + s.stem + ": no class with two instances; pass --ref");
        continue;
      }
      fr = ref->row * f_x.height() / s.image.height();
      fc = ref->col * f_x.width() / s.image.width();
      second = std::move(ref->second);
    }
    const auto clean_map = evalx::similarity_map(f_x, fr, fc);
    const auto adv_map = evalx::similarity_map(f_a, fr, fc);
    evalx::write_heatmap(out / "simmap" / (s.stem + ".png"), {&clean_map, &adv_map}, cfg.simmap.scale);
    json entry = {{"image", s.stem}, {"ref", {fr, fc}}, {"layer", layer}};
    if (!second.empty()) {
      const double before = evalx::region_mean(clean_map, second, s.image.height(), s.image.width());
      const double after = evalx::region_mean(adv_map, second, s.image.height(), s.image.width());
      entry["second_instance_mean_clean"] = before;
      entry["second_instance_mean_adversarial"] = after;
      drop_sum += before - after;
      ++drop_count;
    }
    images.push_back(entry);
  }
  json doc = {{"command", "simmap"},
              {"config", cfg.to_json()},
              {"source", evalx::model_json(source)},
              {"layer", layer},
              {"images", images}};
  if (drop_count > 0) {
    doc["mean_second_instance_drop"] = drop_sum / drop_count;
    std::ostringstream s;
    s << "mean similarity drop on the second instance: " << drop_sum / drop_count << " over " << drop_count
      << " image(s)";
    ctx.log(s.str());
  }
  write_json(out / "simmap.json", doc);
  ctx.log("wrote " + (out / "simmap").string());
  return kOk;
}

int cmd_synth(const Overrides& o, Context& ctx) {
  config::RunConfig cfg = ctx.resolve(o, false, {"seed", "data", "out", "synth"});
  const fs::path root = cfg.data_root.empty() ? cfg.out : cfg.data_root;
  const auto& y = cfg.synth;
  for (const auto& [split, count, index] :
       {std::tuple{"train", y.train_images, 1}, std::tuple{"eval", y.eval_images, 2}}) {
    datax::SynthSpec spec = datax::SynthSpec::desk(count, derive_seed(cfg.seed, static_cast<std::uint64_t>(index)));
    spec.height = y.height;
    spec.width = y.width;
    spec.min_radius = y.min_radius;
    spec.max_radius = y.max_radius;
    spec.color_jitter = y.color_jitter;
    spec.pixel_noise = y.pixel_noise;
    spec.background_texture = y.background_texture;
    spec.stem_prefix = split;
    const auto m = datax::generate_synthetic(spec, root / split);
    ctx.log("wrote " + std::to_string(m.pairs.size()) + " image(s) to " + m.root.string());
  }
  write_json(root / "synth_config.json", cfg.to_json());
  return kOk;
}

int cmd_train(const Overrides& o, Context& ctx) {
  config::RunConfig cfg = ctx.resolve(o, false, {"seed", "data", "train"});
  const auto& t = cfg.train;
  const fs::path train_root = !t.data.empty() ? t.data : cfg.data_root / "train";
  const fs::path eval_root = !t.eval.empty() ? t.eval : cfg.data_root / "eval";
  if (t.data.empty() && cfg.data_root.empty()) fail(ErrorKind::config, "no training data (train.data or --data)");
  const auto train = datax::load_manifest(train_root);
  std::optional<datax::DatasetManifest> eval;
  if (fs::exists(eval_root)) eval = datax::load_manifest(eval_root);
  datax::TrainOptions opts;
  opts.learning_rate = t.learning_rate;
  opts.batch_size = t.batch_size;
  opts.log = [&ctx](const std::string& s) { ctx.log(s); };
  json report = {{"command", "train"}, {"config", cfg.to_json()}, {"models", json::array()}};
  for (const auto& id : t.models) {
    const fs::path weights = t.out_dir / (id + ".bin");
    const auto r = datax::train_toy(id, train, t.epochs, cfg.seed, weights, opts, eval ? &*eval : nullptr);
    json e = {{"model", id}, {"weights", weights.string()}, {"final_loss", r.final_loss}};
    if (r.eval_miou) e["eval_miou"] = *r.eval_miou;
    report["models"].push_back(e);
    ctx.log("saved " + weights.string());
  }
  write_json(t.out_dir / "train_report.json", report);
  return kOk;
}

int cmd_list_models(Context& ctx) {
  for (const auto& m : adapters::list_models()) {
    ctx.out() << m.model_id << "  [" << m.architecture << "]  " << (m.bundled ? "bundled" : "needs weights") << "  "
              << m.description << "\n";
    ctx.out() << "    layers:";
    for (const auto& l : m.layers) ctx.out() << " " << l << (l == m.recommended_layer ? "*" : "");
    ctx.out() << "\n";
  }
  ctx.out() << "(* recommended attack layer)\n";
  return kOk;
}

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "TOML run configuration");
  cmd->add_option("--seed", o.seed, "root seed");
  cmd->add_option("--workers", o.workers, "worker threads");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--data", o.data, "dataset root");
}

void add_models(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--source", o.sources, "source model id[@weights]");
  cmd->add_option("--target", o.targets, "target model id[@weights]");
  cmd->add_option("--limit", o.limit, "use the first N images");
}

void add_attack(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--attack", o.attacks, "attack name (fgsm, pgd, fspgd)");
  cmd->add_option("--epsilon", o.epsilon, "L-inf budget, e.g. 8/255");
  cmd->add_option("--alpha", o.alpha, "step size, e.g. 2/255");
  cmd->add_option("--iterations", o.iterations, "iterations T");
  cmd->add_option("--tau", o.tau, "mask threshold");
  cmd->add_option("--layer", o.layer, "attack layer");
  cmd->add_option("--loss-mode", o.loss_mode, "dynamic, ex_only, in_only, const:<scale>");
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Feature-similarity adversarial attacks on segmentation models"};
  app.require_subcommand(1);
  Overrides o;
  std::string sweep_kind;

  auto* attack = app.add_subcommand("attack", "attack one source model and report mIoU");
  add_common(attack, o);
  add_models(attack, o);
  add_attack(attack, o);
  attack->add_flag("--no-images", o.no_images, "do not write adversarial PNGs");

  auto* transfer = app.add_subcommand("transfer", "source x attack -> target mIoU matrix");
  add_common(transfer, o);
  add_models(transfer, o);
  add_attack(transfer, o);

  auto* sweep = app.add_subcommand("sweep", "ablation over tau, lambda_mode or layer");
  sweep->add_option("kind", sweep_kind, "tau | lambda_mode | layer");
  add_common(sweep, o);
  add_models(sweep, o);
  add_attack(sweep, o);
  sweep->add_option("--grid", o.grid, "grid values (default: the kind's standard grid)");

  auto* simmap = app.add_subcommand("simmap", "clean vs adversarial feature-similarity maps");
  add_common(simmap, o);
  add_models(simmap, o);
  add_attack(simmap, o);
  simmap->add_option("--ref", o.ref, "reference pixel row,col in feature coordinates");
  simmap->add_option("--image", o.image, "restrict to one image stem");

  auto* synth = app.add_subcommand("synth", "generate the synthetic shapes benchmark");
  add_common(synth, o);
  synth->add_option("--preset", o.preset, "dataset preset (desk)");
  synth->add_option("--train-images", o.train_images, "training images");
  synth->add_option("--eval-images", o.eval_images, "evaluation images");

  auto* train = app.add_subcommand("train", "train bundled toy models");
  add_common(train, o);
  train->add_flag("--all-toys", o.all_toys, "train every bundled toy model");
  train->add_option("--model", o.models, "model id to train");
  train->add_option("--epochs", o.epochs, "epochs");
  train->add_option("--models-dir", o.models_dir, "where checkpoints go");
  train->add_option("--train-data", o.train_data, "training split root");
  train->add_option("--eval-data", o.eval_data, "evaluation split root");

  auto* list = app.add_subcommand("list-models", "registered models and attack layers");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  Context ctx(out, err);
  try {
    if (attack->parsed()) return cmd_attack(o, ctx);
    if (transfer->parsed()) return cmd_transfer(o, ctx);
    if (sweep->parsed()) return cmd_sweep(sweep_kind, o, ctx);
    if (simmap->parsed()) return cmd_simmap(o, ctx);
    if (synth->parsed()) return cmd_synth(o, ctx);
    if (train->parsed()) return cmd_train(o, ctx);
    if (list->parsed()) return cmd_list_models(ctx);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kModelError;
  }
  return kConfigError;
}

}  // namespace segattack::cli
