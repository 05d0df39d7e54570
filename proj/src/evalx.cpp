#include "segattack/evalx.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <mutex>
#include <numbers>
#include <regex>
#include <sstream>
#include <thread>

#include "segattack/error.hpp"
#include "segattack/io/checksum.hpp"
#include "segattack/io/png.hpp"
#include "segattack/seeding.hpp"
#include "segattack/simcore.hpp"

namespace segattack::evalx {
using nlohmann::json;

// ---- metrics ----------------------------------------------------------------

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : n_(num_classes), counts_(static_cast<std::size_t>(num_classes) * static_cast<std::size_t>(num_classes), 0) {
  if (num_classes < 0) fail(ErrorKind::config, "num_classes must be >= 0");
}

std::uint64_t ConfusionMatrix::total() const noexcept {
  std::uint64_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& o) {
  if (o.n_ != n_) fail(ErrorKind::shape, "confusion matrices differ in class count");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += o.counts_[i];
  return *this;
}

void accumulate(ConfusionMatrix& conf, const LabelMap& pred, const LabelMap& gt, int ignore_index) {
  if (pred.height() != gt.height() || pred.width() != gt.width()) {
    fail(ErrorKind::shape, "prediction and ground truth differ in size");
  }
  const int n = conf.num_classes();
  const auto p = pred.values();
  const auto g = gt.values();
  for (std::size_t i = 0; i < g.size(); ++i) {
    const int gi = g[i];
    if (gi == ignore_index) continue;
    if (gi >= n) fail(ErrorKind::invalid_input, "ground-truth label " + std::to_string(gi) + " out of range");
    const int pi = p[i];
    if (pi < n) ++conf.at(gi, pi);
  }
}

ConfusionMatrix confusion(const LabelMap& pred, const LabelMap& gt, int num_classes, int ignore_index) {
  ConfusionMatrix conf(num_classes);
  accumulate(conf, pred, gt, ignore_index);
  return conf;
}

EvalReport miou(const ConfusionMatrix& conf) {
  const int n = conf.num_classes();
  EvalReport r;
  r.per_class_iou.resize(static_cast<std::size_t>(n));
  r.true_positive.assign(static_cast<std::size_t>(n), 0);
  r.false_positive.assign(static_cast<std::size_t>(n), 0);
  r.false_negative.assign(static_cast<std::size_t>(n), 0);
  for (int g = 0; g < n; ++g) {
    for (int p = 0; p < n; ++p) {
      const auto c = conf.at(g, p);
      r.valid_pixels += c;
      if (g == p) {
        r.true_positive[static_cast<std::size_t>(g)] += c;
      } else {
        r.false_negative[static_cast<std::size_t>(g)] += c;
        r.false_positive[static_cast<std::size_t>(p)] += c;
      }
    }
  }
  // Extended precision so that small hand cases round exactly.
  long double sum = 0.0L;
  int defined = 0;
  for (std::size_t c = 0; c < static_cast<std::size_t>(n); ++c) {
    const auto uni = r.true_positive[c] + r.false_positive[c] + r.false_negative[c];
    if (uni == 0) continue;
    const long double iou = static_cast<long double>(r.true_positive[c]) / static_cast<long double>(uni);
    r.per_class_iou[c] = static_cast<double>(iou);
    sum += iou;
    ++defined;
  }
  if (defined == 0) fail(ErrorKind::undefined_metric, "every class has an empty union; mIoU is undefined");
  r.miou = static_cast<double>(sum / defined);
  return r;
}

json EvalReport::to_json() const {
  json iou = json::array();
  for (const auto& v : per_class_iou) iou.push_back(v ? json(*v) : json(nullptr));
  return {{"miou", miou},
          {"per_class_iou", iou},
          {"valid_pixels", valid_pixels},
          {"true_positive", true_positive},
          {"false_positive", false_positive},
          {"false_negative", false_negative},
          {"aggregation", aggregation}};
}

EvalReport evaluate(const adapters::ModelAdapter& model, const std::vector<Sample>& samples) {
  ConfusionMatrix conf(model.num_classes());
  for (const auto& s : samples) {
    accumulate(conf, argmax_labels(model.forward(s.image), s.labels.ignore_index()), s.labels,
               s.labels.ignore_index());
  }
  return miou(conf);
}

// ---- serialization ------------------------------------------------------------

std::string config_hash(const json& config) { return io::sha256_hex(config.dump()); }

json to_json(const attacker::AttackConfig& cfg) {
  return {{"epsilon", cfg.epsilon},
          {"alpha", cfg.alpha},
          {"iterations", cfg.iterations},
          {"tau", cfg.tau},
          {"layer_id", cfg.layer_id},
          {"seed", cfg.seed},
          {"loss_mode", cfg.loss_mode.name()},
          {"pixel_clamp", cfg.pixel_clamp},
          {"dense_limit", cfg.tiling.dense_limit},
          {"tile_rows", cfg.tiling.tile_rows}};
}

json to_json(const attacker::AttackTrace& trace) {
  json steps = json::array();
  for (const auto& s : trace.steps) {
    steps.push_back({{"t", s.t},
                     {"lambda_t", s.lambda_t},
                     {"l_ex", s.l_ex},
                     {"l_in", s.l_in},
                     {"combined", s.combined},
                     {"count_k", s.count_k},
                     {"empty_mask", s.empty_mask},
                     {"max_delta", s.max_delta},
                     {"min_pixel", s.min_pixel},
                     {"max_pixel", s.max_pixel}});
  }
  return {{"attack", trace.attack},       {"objective", trace.objective},
          {"layer_id", trace.layer_id},   {"init_max_delta", trace.init_max_delta},
          {"warnings", trace.warnings},   {"steps", steps}};
}

json model_json(const adapters::ModelAdapter& model) {
  return {{"model_id", model.model_id()},
          {"architecture", model.architecture()},
          {"checksum", model.checksum()},
          {"num_classes", model.num_classes()},
          {"layers", model.available_layers()},
          {"recommended_layer", model.recommended_layer()},
          {"preprocessing", model.input_spec().preprocessing}};
}

// ---- transfer ---------------------------------------------------------------

namespace {

struct CellAccumulator {
  ConfusionMatrix plain;
  ConfusionMatrix quantized;
  std::string error;
  ErrorKind kind = ErrorKind::invalid_input;
};

// Runs fn(worker, index) for every index; worker w takes indices w, w+W, ...
template <typename F>
void parallel_for(std::size_t count, int workers, F&& fn) {
  const int w = std::max(1, std::min<int>(workers, static_cast<int>(std::max<std::size_t>(count, 1))));
  if (w == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(0, i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(w));
  for (int k = 0; k < w; ++k) {
    pool.emplace_back([&, k] {
      for (std::size_t i = static_cast<std::size_t>(k); i < count; i += static_cast<std::size_t>(w)) fn(k, i);
    });
  }
  for (auto& t : pool) t.join();
}

std::string dataset_digest(const std::vector<Sample>& dataset) {
  std::string stems;
  for (const auto& s : dataset) stems += s.stem + '\n';
  return io::sha256_hex(stems);
}

std::string format_cell(const TransferCell& c) {
  if (!c.ok) return "ERR";
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << 100.0 * c.miou;
  return s.str();
}

}  // namespace

const TransferCell* TransferMatrix::cell(const std::string& row_label, const std::string& target) const {
  for (const auto& row : rows) {
    if (row.label != row_label) continue;
    for (const auto& c : row.cells) {
      if (c.target == target) return &c;
    }
  }
  return nullptr;
}

std::size_t TransferMatrix::succeeded_cells() const {
  std::size_t n = 0;
  for (const auto& r : rows) {
    for (const auto& c : r.cells) n += c.ok ? 1 : 0;
  }
  return n;
}

std::size_t TransferMatrix::failed_cells() const {
  std::size_t n = 0;
  for (const auto& r : rows) {
    for (const auto& c : r.cells) n += c.ok ? 0 : 1;
  }
  return n;
}

json TransferMatrix::to_json() const {
  json jrows = json::array();
  for (const auto& r : rows) {
    json cells = json::array();
    for (const auto& c : r.cells) {
      json jc = {{"target", c.target}, {"ok", c.ok}, {"seed", c.seed}, {"config_hash", c.config_hash}};
      if (c.ok) {
        jc["miou"] = c.miou;
        jc["miou_quantized"] = c.miou_quantized ? json(*c.miou_quantized) : json(nullptr);
        if (c.report) jc["report"] = c.report->to_json();
      } else {
        jc["error"] = c.error;
      }
      cells.push_back(std::move(jc));
    }
    jrows.push_back({{"source", r.source}, {"attack", r.attack}, {"label", r.label}, {"config", r.config},
                     {"cells", cells}});
  }
  return {{"targets", targets},
          {"target_models", target_info},
          {"num_samples", num_samples},
          {"aggregation", "global"},
          {"rows", jrows}};
}

std::string TransferMatrix::render_table() const {
  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> header = {"source", "attack"};
  for (const auto& t : targets) header.push_back(t);
  grid.push_back(header);

  std::vector<double> best(targets.size(), 2.0);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].cells.size(); ++c) {
      if (rows[r].cells[c].ok) best[c] = std::min(best[c], rows[r].cells[c].miou);
    }
  }
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::vector<std::string> line = {rows[r].source.empty() ? "-" : rows[r].source, rows[r].label};
    for (std::size_t c = 0; c < rows[r].cells.size(); ++c) {
      std::string v = format_cell(rows[r].cells[c]);
      if (r > 0 && rows[r].cells[c].ok && rows[r].cells[c].miou == best[c]) v += "*";
      line.push_back(v);
    }
    grid.push_back(line);
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : grid) {
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
  }
  std::ostringstream out;
  out << "mIoU (%) on target models, lower is a stronger attack; * marks the column minimum\n";
  for (std::size_t l = 0; l < grid.size(); ++l) {
    for (std::size_t i = 0; i < grid[l].size(); ++i) {
      out << (i ? "  " : "") << std::setw(static_cast<int>(width[i])) << (i < 2 ? std::left : std::right)
          << grid[l][i];
    }
    out << '\n';
    if (l == 0 || l == 1) {
      std::size_t total = 0;
      for (auto w : width) total += w + 2;
      out << std::string(total - 2, '-') << '\n';
    }
  }
  return out.str();
}

TransferMatrix run_transfer(const std::vector<const adapters::ModelAdapter*>& sources,
                            const std::vector<const adapters::ModelAdapter*>& targets,
                            const std::vector<AttackSpec>& attacks, const std::vector<Sample>& dataset,
                            const TransferOptions& options) {
  if (dataset.empty()) fail(ErrorKind::config, "transfer run needs a nonempty dataset");
  if (targets.empty()) fail(ErrorKind::config, "transfer run needs at least one target model");
  for (const auto* m : targets) {
    if (m == nullptr) fail(ErrorKind::config, "null target model");
  }
  if (!attacks.empty() && sources.empty()) fail(ErrorKind::config, "attacks need at least one source model");
  std::vector<std::unique_ptr<attacker::Attack>> engines;
  for (const auto& a : attacks) {
    engines.push_back(attacker::make_attack(a.name));
    a.config.validate();
  }
  const auto log = [&](const std::string& s) {
    if (options.log) options.log(s);
  };
  const int workers = std::max(1, options.workers);
  const std::string digest = dataset_digest(dataset);

  TransferMatrix m;
  m.num_samples = dataset.size();
  for (const auto* t : targets) {
    m.targets.push_back(t->model_id());
    m.target_info.push_back(model_json(*t));
  }

  // Private copies per worker; adapters are single-caller.
  std::vector<std::vector<adapters::ModelAdapter>> target_copies(static_cast<std::size_t>(workers));
  for (auto& v : target_copies) {
    for (const auto* t : targets) v.push_back(*t);
  }

  auto finish_row = [&](TransferRow& row, std::vector<std::vector<CellAccumulator>>& acc, std::uint64_t seed,
                        const json& base_config, bool quantized) {
    for (std::size_t ti = 0; ti < targets.size(); ++ti) {
      TransferCell cell;
      cell.target = targets[ti]->model_id();
      cell.seed = seed;
      json cfg = base_config;
      cfg["target"] = model_json(*targets[ti]);
      cfg["dataset"] = digest;
      cell.config_hash = config_hash(cfg);
      CellAccumulator sum{ConfusionMatrix(targets[ti]->num_classes()), ConfusionMatrix(targets[ti]->num_classes()), {}};
      for (auto& per_worker : acc) {
        auto& a = per_worker[ti];
        if (!a.error.empty() && sum.error.empty()) {
          sum.error = a.error;
          sum.kind = a.kind;
        }
        sum.plain += a.plain;
        sum.quantized += a.quantized;
      }
      if (sum.error.empty()) {
        try {
          cell.report = miou(sum.plain);
          cell.miou = cell.report->miou;
          if (quantized) cell.miou_quantized = miou(sum.quantized).miou;
          cell.ok = true;
        } catch (const Error& e) {
          cell.error = e.what();
          cell.error_kind = e.kind();
        }
      } else {
        cell.error = sum.error;
        cell.error_kind = sum.kind;
      }
      row.cells.push_back(std::move(cell));
    }
  };

  auto make_acc = [&] {
    std::vector<std::vector<CellAccumulator>> acc(static_cast<std::size_t>(workers));
    for (auto& per_worker : acc) {
      for (const auto* t : targets) {
        per_worker.push_back({ConfusionMatrix(t->num_classes()), ConfusionMatrix(t->num_classes()), {}});
      }
    }
    return acc;
  };

  auto eval_into = [&](std::vector<CellAccumulator>& acc_w, int w, const Tensor3& image, const LabelMap& labels,
                       bool quantized) {
    const Tensor3 q = quantized ? datax::quantize8(image) : Tensor3{};
    for (std::size_t ti = 0; ti < targets.size(); ++ti) {
      auto& a = acc_w[ti];
      if (!a.error.empty()) continue;
      try {
        const auto& model = target_copies[static_cast<std::size_t>(w)][ti];
        accumulate(a.plain, argmax_labels(model.forward(image), labels.ignore_index()), labels,
                   labels.ignore_index());
        if (quantized) {
          accumulate(a.quantized, argmax_labels(model.forward(q), labels.ignore_index()), labels,
                     labels.ignore_index());
        }
      } catch (const Error& e) {
        a.error = e.what();
        a.kind = e.kind();
      }
    }
  };

  // Clean row.
  {
    log("evaluating clean images on " + std::to_string(targets.size()) + " target(s)");
    TransferRow row;
    row.attack = "clean";
    row.label = "clean";
    row.config = {{"attack", "clean"}};
    auto acc = make_acc();
    parallel_for(dataset.size(), workers, [&](int w, std::size_t i) {
      eval_into(acc[static_cast<std::size_t>(w)], w, dataset[i].image, dataset[i].labels, false);
    });
    finish_row(row, acc, 0, row.config, false);
    m.rows.push_back(std::move(row));
  }

  std::mutex trace_mutex;
  for (const auto* source : sources) {
    if (source == nullptr) fail(ErrorKind::config, "null source model");
    std::vector<adapters::ModelAdapter> source_copies(static_cast<std::size_t>(workers), *source);
    for (std::size_t ai = 0; ai < attacks.size(); ++ai) {
      const AttackSpec& spec = attacks[ai];
      const std::string label = spec.label.empty() ? spec.name : spec.label;
      log("attack " + label + " on source " + source->model_id() + " over " + std::to_string(dataset.size()) +
          " image(s)");
      TransferRow row;
      row.source = source->model_id();
      row.attack = spec.name;
      row.label = label;
      row.config = {{"attack", spec.name},
                    {"label", label},
                    {"config", to_json(spec.config)},
                    {"source", model_json(*source)},
                    {"per_image_seed", "derive_seed(seed, sample_index)"}};
      auto acc = make_acc();
      std::vector<std::string> attack_error(static_cast<std::size_t>(workers));
      std::vector<ErrorKind> attack_kind(static_cast<std::size_t>(workers), ErrorKind::invalid_input);
      const std::size_t row_index = m.rows.size();
      parallel_for(dataset.size(), workers, [&](int w, std::size_t i) {
        auto& err = attack_error[static_cast<std::size_t>(w)];
        if (!err.empty()) return;
        attacker::AttackConfig cfg = spec.config;
        cfg.seed = derive_seed(spec.config.seed, i);
        attacker::AttackTrace trace;
        try {
          trace = engines[ai]->run(source_copies[static_cast<std::size_t>(w)], dataset[i].image, &dataset[i].labels,
                                   cfg);
        } catch (const Error& e) {
          err = std::string(e.what()) + " (sample " + dataset[i].stem + ")";
          attack_kind[static_cast<std::size_t>(w)] = e.kind();
          return;
        }
        if (options.on_trace) {
          std::lock_guard lock(trace_mutex);
          options.on_trace(row_index, i, trace);
        }
        eval_into(acc[static_cast<std::size_t>(w)], w, trace.adversarial, dataset[i].labels, options.quantized);
      });
      for (std::size_t w = 0; w < attack_error.size(); ++w) {
        const auto& err = attack_error[w];
        if (err.empty()) continue;
        for (auto& per_worker : acc) {
          for (auto& a : per_worker) {
            a.error = "attack failed: " + err;
            a.kind = attack_kind[w];
          }
        }
        log("attack " + label + " failed: " + err);
        break;
      }
      finish_row(row, acc, spec.config.seed, row.config, options.quantized);
      m.rows.push_back(std::move(row));
    }
  }
  return m;
}

// ---- sweeps -----------------------------------------------------------------

std::string to_string(SweepKind kind) {
  switch (kind) {
    case SweepKind::tau:
      return "tau";
    case SweepKind::lambda_mode:
      return "lambda_mode";
    case SweepKind::layer:
      return "layer";
  }
  return "tau";
}

SweepKind parse_sweep_kind(const std::string& text) {
  for (SweepKind k : {SweepKind::tau, SweepKind::lambda_mode, SweepKind::layer}) {
    if (to_string(k) == text) return k;
  }
  fail(ErrorKind::config, "unknown sweep kind '" + text + "' (tau, lambda_mode, layer)");
}

namespace {

double parse_tau(const std::string& key) {
  static const std::regex cos_pi(R"(^cos\(pi/([0-9]+(\.[0-9]+)?)\)$)");
  std::smatch match;
  if (std::regex_match(key, match, cos_pi)) {
    const double d = std::stod(match[1].str());
    if (d <= 0) fail(ErrorKind::config, "bad tau key " + key);
    return std::cos(std::numbers::pi / d);
  }
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(key, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != key.size() || used == 0) fail(ErrorKind::config, "tau key '" + key + "' is neither a number nor cos(pi/d)");
  return v;
}

std::string lambda_label(const std::string& key) {
  const auto mode = attacker::LossMode::parse(key);
  switch (mode.kind) {
    case attacker::LossMode::Kind::ex_only:
      return "L_ex";
    case attacker::LossMode::Kind::in_only:
      return "L_in";
    case attacker::LossMode::Kind::fspgd_dynamic:
      return "lambda_t L_ex + (1-lambda_t) L_in";
    case attacker::LossMode::Kind::ex_plus_scaled_in: {
      std::ostringstream s;
      if (mode.scale == 1.0) {
        s << "L_ex + L_in";
      } else {
        s << "L_ex + " << mode.scale << " L_in";
      }
      return s.str();
    }
  }
  return key;
}

}  // namespace

std::vector<std::string> default_grid(SweepKind kind, const adapters::ModelAdapter& source) {
  switch (kind) {
    case SweepKind::tau:
      return {"cos(pi/6)", "cos(pi/4)", "cos(pi/3)"};
    case SweepKind::lambda_mode:
      return {"ex_only", "in_only", "const:1", "const:0.5", "const:0.1", "dynamic"};
    case SweepKind::layer:
      return source.available_layers();
  }
  return {};
}

SweepTable sweep(SweepKind kind, const std::vector<std::string>& grid, const AttackSpec& base,
                 const adapters::ModelAdapter& source, const std::vector<const adapters::ModelAdapter*>& targets,
                 const std::vector<Sample>& dataset, const TransferOptions& options) {
  if (grid.empty()) fail(ErrorKind::config, "sweep grid is empty");
  std::vector<AttackSpec> attacks;
  for (const auto& key : grid) {
    AttackSpec a = base;
    switch (kind) {
      case SweepKind::tau:
        a.config.tau = parse_tau(key);
        a.label = "tau=" + key;
        break;
      case SweepKind::lambda_mode:
        a.config.loss_mode = attacker::LossMode::parse(key);
        a.label = lambda_label(key);
        break;
      case SweepKind::layer:
        source.layer_index(key);
        a.config.layer_id = key;
        a.label = "layer " + key;
        break;
    }
    attacks.push_back(std::move(a));
  }
  SweepTable table;
  table.kind = kind;
  table.keys = grid;
  table.matrix = run_transfer({&source}, targets, attacks, dataset, options);
  return table;
}

json SweepTable::to_json() const {
  json out = matrix.to_json();
  out["sweep"] = to_string(kind);
  out["keys"] = keys;
  return out;
}

std::string SweepTable::render_table() const {
  return "sweep over " + to_string(kind) + "\n" + matrix.render_table();
}

// ---- similarity maps ----------------------------------------------------------

SimilarityMap similarity_map(const FeatureMap& f, int ref_row, int ref_col) {
  if (ref_row < 0 || ref_row >= f.height() || ref_col < 0 || ref_col >= f.width()) {
    fail(ErrorKind::index, "reference pixel (" + std::to_string(ref_row) + "," + std::to_string(ref_col) +
                               ") outside the " + std::to_string(f.height()) + "x" + std::to_string(f.width()) +
                               " feature map");
  }
  const FeatureMap u = simcore::normalize_pixels(f);
  const std::size_t ref = static_cast<std::size_t>(ref_row) * static_cast<std::size_t>(f.width()) +
                          static_cast<std::size_t>(ref_col);
  SimilarityMap out;
  out.height = f.height();
  out.width = f.width();
  out.values.assign(f.pixels(), 0.0);
  for (int c = 0; c < f.channels(); ++c) {
    const double* ch = u.channel(c);
    const double r = ch[ref];
    for (std::size_t p = 0; p < f.pixels(); ++p) out.values[p] += r * ch[p];
  }
  return out;
}

double region_mean(const SimilarityMap& map, const std::vector<std::size_t>& pixels, int image_height,
                   int image_width) {
  if (pixels.empty()) fail(ErrorKind::invalid_input, "empty region");
  double sum = 0.0;
  for (std::size_t p : pixels) {
    const int y = static_cast<int>(p / static_cast<std::size_t>(image_width));
    const int x = static_cast<int>(p % static_cast<std::size_t>(image_width));
    if (y >= image_height) fail(ErrorKind::index, "region pixel outside the image");
    sum += map.at(y * map.height / image_height, x * map.width / image_width);
  }
  return sum / static_cast<double>(pixels.size());
}

namespace {

std::array<std::uint8_t, 3> heat_colour(double v) {
  const double t = std::clamp((v + 1.0) * 0.5, 0.0, 1.0);
  const double r = std::clamp(1.5 * t - 0.2, 0.0, 1.0);
  const double g = std::clamp(t * t * 1.1, 0.0, 1.0);
  const double b = std::clamp(0.55 - 0.9 * std::abs(t - 0.35), 0.0, 1.0);
  return {static_cast<std::uint8_t>(std::lround(255 * r)), static_cast<std::uint8_t>(std::lround(255 * g)),
          static_cast<std::uint8_t>(std::lround(255 * b))};
}

}  // namespace

std::optional<InstanceReference> two_instance_reference(const LabelMap& labels, int num_classes) {
  const auto w = static_cast<std::size_t>(labels.width());
  for (int c = 1; c < num_classes; ++c) {
    auto comps = datax::connected_components(labels, c);
    if (comps.size() < 2) continue;
    const auto& first = comps[0];
    double sy = 0.0, sx = 0.0;
    for (auto p : first) {
      sy += static_cast<double>(p / w);
      sx += static_cast<double>(p % w);
    }
    const double cy = sy / static_cast<double>(first.size());
    const double cx = sx / static_cast<double>(first.size());
    std::size_t best = first[0];
    double best_d = std::numeric_limits<double>::infinity();
    for (auto p : first) {
      const double dy = static_cast<double>(p / w) - cy;
      const double dx = static_cast<double>(p % w) - cx;
      if (dy * dy + dx * dx < best_d) {
        best_d = dy * dy + dx * dx;
        best = p;
      }
    }
    return InstanceReference{c, static_cast<int>(best / w), static_cast<int>(best % w), std::move(comps[1])};
  }
  return std::nullopt;
}

void write_heatmap(const std::filesystem::path& path, const std::vector<const SimilarityMap*>& panels, int scale) {
  if (panels.empty() || scale < 1) fail(ErrorKind::config, "heat map needs panels and a positive scale");
  constexpr int kGap = 4;
  int width = 0;
  int height = 0;
  for (const auto* p : panels) {
    width += p->width * scale;
    height = std::max(height, p->height * scale);
  }
  width += kGap * static_cast<int>(panels.size() - 1);
  io::Raster r;
  r.width = width;
  r.height = height;
  r.channels = 3;
  r.pixels.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3, 255);
  int x0 = 0;
  for (const auto* p : panels) {
    for (int y = 0; y < p->height * scale; ++y) {
      for (int x = 0; x < p->width * scale; ++x) {
        const auto c = heat_colour(p->at(y / scale, x / scale));
        const std::size_t o = (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                               static_cast<std::size_t>(x0 + x)) * 3;
        r.pixels[o] = c[0];
        r.pixels[o + 1] = c[1];
        r.pixels[o + 2] = c[2];
      }
    }
    x0 += p->width * scale + kGap;
  }
  io::write_png(path, r);
}

void write_matrix_plot(const std::filesystem::path& path, const TransferMatrix& matrix) {
  constexpr int kCellW = 48;
  constexpr int kCellH = 24;
  constexpr int kGap = 2;
  const int cols = static_cast<int>(matrix.targets.size());
  const int rows = static_cast<int>(matrix.rows.size());
  if (cols == 0 || rows == 0) fail(ErrorKind::config, "empty matrix");
  io::Raster r;
  r.width = cols * (kCellW + kGap) + kGap;
  r.height = rows * (kCellH + kGap) + kGap;
  r.channels = 3;
  r.pixels.assign(static_cast<std::size_t>(r.width) * static_cast<std::size_t>(r.height) * 3, 255);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      const auto& cell = matrix.rows[static_cast<std::size_t>(i)].cells[static_cast<std::size_t>(j)];
      std::array<std::uint8_t, 3> c{200, 0, 0};
      if (cell.ok) {
        const auto g = static_cast<std::uint8_t>(std::lround(235.0 * std::clamp(cell.miou, 0.0, 1.0)));
        c = {g, g, static_cast<std::uint8_t>(std::min(255, g + 20))};
      }
      for (int y = 0; y < kCellH; ++y) {
        for (int x = 0; x < kCellW; ++x) {
          const int py = kGap + i * (kCellH + kGap) + y;
          const int px = kGap + j * (kCellW + kGap) + x;
          const std::size_t o = (static_cast<std::size_t>(py) * static_cast<std::size_t>(r.width) +
                                 static_cast<std::size_t>(px)) * 3;
          r.pixels[o] = c[0];
          r.pixels[o + 1] = c[1];
          r.pixels[o + 2] = c[2];
        }
      }
    }
  }
  io::write_png(path, r);
}

}  // namespace segattack::evalx
