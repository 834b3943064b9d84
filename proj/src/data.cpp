#include "covreg/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "covreg/diagnostics.hpp"
#include "covreg/errors.hpp"

namespace covreg {

double Scaler::transform(double v, std::size_t feature) const {
  if (!fitted()) return v;
  return (v - mean.at(feature)) / std.at(feature);
}

double Scaler::inverse(double v, std::size_t feature) const {
  if (!fitted()) return v;
  return v * std.at(feature) + mean.at(feature);
}

GraphKind parse_graph_kind(const std::string& s) {
  if (s == "ring") return GraphKind::Ring;
  if (s == "grid") return GraphKind::Grid;
  if (s == "random_geometric") return GraphKind::RandomGeometric;
  throw ConfigError("unknown graph kind '" + s + "'");
}

std::string to_string(GraphKind k) {
  switch (k) {
    case GraphKind::Ring: return "ring";
    case GraphKind::Grid: return "grid";
    case GraphKind::RandomGeometric: return "random_geometric";
  }
  return "?";
}

Tensor make_adjacency(std::size_t n, GraphKind kind, double radius, std::uint64_t seed) {
  if (n < 2) throw ConfigError("graph needs at least 2 nodes");
  Tensor a(Shape{n, n});
  auto link = [&](std::size_t i, std::size_t j) {
    if (i == j) return;
    a.at(i, j) = 1.0;
    a.at(j, i) = 1.0;
  };
  switch (kind) {
    case GraphKind::Ring:
      for (std::size_t i = 0; i < n; ++i) link(i, (i + 1) % n);
      break;
    case GraphKind::Grid: {
      const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
      for (std::size_t i = 0; i < n; ++i) {
        if ((i % cols) + 1 < cols && i + 1 < n) link(i, i + 1);
        if (i + cols < n) link(i, i + cols);
      }
      break;
    }
    case GraphKind::RandomGeometric: {
      if (!(radius > 0.0)) throw ConfigError("random_geometric graph needs a positive radius");
      Rng rng(seed);
      std::uniform_real_distribution<double> u(0.0, 1.0);
      std::vector<double> px(n), py(n);
      for (std::size_t i = 0; i < n; ++i) {
        px[i] = u(rng);
        py[i] = u(rng);
      }
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
          if (std::hypot(px[i] - px[j], py[i] - py[j]) < radius) link(i, j);
      break;
    }
  }
  return a;
}

SeriesDataset generate_traffic_like(const TrafficConfig& cfg) {
  const std::size_t n = cfg.n_nodes, total = cfg.t_total;
  if (n < 2) throw ConfigError("generate_traffic_like needs n_nodes >= 2");
  if (total == 0 || cfg.period == 0) throw ConfigError("t_total and period must be positive");
  if (cfg.phase_groups == 0) throw ConfigError("phase_groups must be positive");
  if (cfg.diffusion < 0.0 || cfg.diffusion > 1.0) throw ConfigError("diffusion must lie in [0, 1]");
  if (cfg.noise_sigma < 0.0 || cfg.shock_sigma < 0.0) throw ConfigError("noise levels must be non-negative");

  SeriesDataset d;
  d.graph = GraphSpec::from_adjacency(make_adjacency(n, cfg.graph_kind, cfg.geometric_radius, cfg.seed ^ 0x9e37u));
  Rng rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  const double two_pi = 2.0 * std::numbers::pi;
  const double p = static_cast<double>(cfg.period);
  std::vector<double> group_phase(cfg.phase_groups);
  for (std::size_t g = 0; g < cfg.phase_groups; ++g)
    group_phase[g] = p * static_cast<double>(g) / static_cast<double>(cfg.phase_groups) * 0.25;
  std::vector<double> level(n), amp(n), phase(n);
  for (std::size_t i = 0; i < n; ++i) {
    level[i] = cfg.level + 4.0 * (u(rng) - 0.5);
    amp[i] = cfg.amplitude * (0.8 + 0.4 * u(rng));
    phase[i] = group_phase[i * cfg.phase_groups / n];
  }

  // Row-normalized neighbour averaging for the incident diffusion.
  std::vector<double> prow(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < n; ++j) deg += d.graph.adjacency.at(i, j);
    for (std::size_t j = 0; j < n; ++j) prow[i * n + j] = deg > 0.0 ? d.graph.adjacency.at(i, j) / deg : 0.0;
  }

  auto dip = [&](double t, double center) {
    // Periodic distance to the dip center.
    double x = std::fmod(t - center, p);
    if (x < 0) x += p;
    x = std::min(x, p - x);
    return std::exp(-0.5 * x * x / (cfg.dip_width * cfg.dip_width));
  };

  d.values = Tensor(Shape{total, n, 1});
  std::vector<double> clean(total * n);
  std::vector<double> z(n, 0.0), zn(n);
  for (std::size_t t = 0; t < total; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      double spread = 0.0;
      for (std::size_t j = 0; j < n; ++j) spread += prow[i * n + j] * z[j];
      zn[i] = cfg.ar * ((1.0 - cfg.diffusion) * z[i] + cfg.diffusion * spread);
    }
    for (std::size_t i = 0; i < n; ++i) {
      zn[i] += cfg.shock_sigma * gauss(rng);
      const double tt = static_cast<double>(t) - phase[i];
      const double seasonal = amp[i] * std::sin(two_pi * tt / p) -
                              cfg.dip_depth * (dip(tt, 0.33 * p) + 0.8 * dip(tt, 0.72 * p));
      clean[t * n + i] = level[i] + seasonal + zn[i];
      d.values[t * n + i] = clean[t * n + i] + cfg.noise_sigma * gauss(rng);
    }
    z.swap(zn);
  }
  d.valid_mask.assign(total * n, 1);

  d.truth_correlation = Tensor(Shape{n, n});
  std::vector<double> a(total), b(total);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < total; ++t) a[t] = clean[t * n + i];
    for (std::size_t j = i; j < n; ++j) {
      for (std::size_t t = 0; t < total; ++t) b[t] = clean[t * n + j];
      const double r = pearson(a, b).value_or(i == j ? 1.0 : 0.0);
      d.truth_correlation.at(i, j) = r;
      d.truth_correlation.at(j, i) = r;
    }
  }
  return d;
}

LabeledSet LabeledSet::subset(const std::vector<std::size_t>& idx) const {
  LabeledSet out;
  const std::size_t dim = x.cols(), c = y.cols();
  out.x = Tensor(Shape{idx.size(), dim});
  out.y = Tensor(Shape{idx.size(), c});
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const std::size_t i = idx[k];
    for (std::size_t j = 0; j < dim; ++j) out.x.at(k, j) = x.at(i, j);
    for (std::size_t j = 0; j < c; ++j) out.y.at(k, j) = y.at(i, j);
    out.labels.push_back(labels[i]);
    if (std::binary_search(ambiguous.begin(), ambiguous.end(), i)) out.ambiguous.push_back(k);
  }
  return out;
}

LabeledSet generate_toy_classification(const ToyConfig& cfg) {
  if (cfg.n_classes < 2) throw ConfigError("generate_toy_classification needs at least 2 classes");
  if (cfg.dim == 0 || cfg.n_per_class == 0) throw ConfigError("dim and n_per_class must be positive");
  if (cfg.ambiguous_fraction < 0.0 || cfg.ambiguous_fraction >= 1.0) {
    throw ConfigError("ambiguous_fraction must lie in [0, 1)");
  }
  Rng rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t c = cfg.n_classes, dim = cfg.dim;

  std::vector<double> means(c * dim);
  for (double& m : means) m = cfg.separation * gauss(rng) / std::sqrt(2.0);

  const std::size_t n = c * cfg.n_per_class;
  LabeledSet s;
  s.x = Tensor(Shape{n, dim});
  s.y = Tensor(Shape{n, c});
  s.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t label = i % c;
    const bool ambiguous = u(rng) < cfg.ambiguous_fraction;
    std::size_t other = label;
    if (ambiguous) {
      other = (label + 1 + static_cast<std::size_t>(u(rng) * static_cast<double>(c - 1))) % c;
      if (other == label) other = (label + 1) % c;
      s.ambiguous.push_back(i);
    }
    for (std::size_t j = 0; j < dim; ++j) {
      const double center = ambiguous ? 0.5 * (means[label * dim + j] + means[other * dim + j]) : means[label * dim + j];
      s.x.at(i, j) = center + cfg.spread * gauss(rng);
    }
    s.labels[i] = label;
    s.y.at(i, label) = 1.0;
  }
  return s;
}

namespace {

std::array<std::size_t, 3> split_counts(std::size_t n, const std::vector<double>& ratios) {
  if (ratios.size() != 3) throw ConfigError("split ratios need exactly 3 entries");
  double total = 0.0;
  for (double r : ratios) {
    if (!(r >= 0.0)) throw ConfigError("split ratios must be non-negative");
    total += r;
  }
  if (!(total > 0.0)) throw ConfigError("split ratios sum to zero");
  const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratios[0] / total));
  const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratios[1] / total));
  std::size_t n_test = n - n_train - n_val;
  if (ratios[2] == 0.0) return {n_train + n_test, n_val, 0};
  return {n_train, n_val, n_test};
}

}  // namespace

LabeledSplit split_labeled(const LabeledSet& set, const std::vector<double>& ratios, std::uint64_t seed) {
  std::vector<std::size_t> idx(set.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto counts = split_counts(idx.size(), ratios);
  auto take = [&](std::size_t from, std::size_t count) {
    std::vector<std::size_t> part(idx.begin() + static_cast<std::ptrdiff_t>(from),
                                  idx.begin() + static_cast<std::ptrdiff_t>(from + count));
    std::sort(part.begin(), part.end());
    return set.subset(part);
  };
  return LabeledSplit{take(0, counts[0]), take(counts[0], counts[1]), take(counts[0] + counts[1], counts[2])};
}

NoiseMode parse_noise_mode(const std::string& s) {
  if (s == "replace_white") return NoiseMode::ReplaceWhite;
  if (s == "add_white") return NoiseMode::AddWhite;
  throw ConfigError("unknown noise mode '" + s + "'");
}

std::string to_string(NoiseMode m) { return m == NoiseMode::ReplaceWhite ? "replace_white" : "add_white"; }

SeriesDataset inject_node_noise(const SeriesDataset& d, const std::vector<std::size_t>& node_ids,
                                const NoiseConfig& cfg) {
  const std::size_t n = d.n_nodes(), total = d.t_total(), nf = d.n_features();
  for (std::size_t id : node_ids) {
    if (id >= n) throw DimensionError("noise node " + std::to_string(id) + " out of range for " + std::to_string(n));
  }
  if (cfg.sigma && !(*cfg.sigma >= 0.0)) throw ConfigError("noise sigma must be non-negative");
  SeriesDataset out = d;
  if (node_ids.empty()) return out;
  Rng rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto train_end = std::max<std::size_t>(
      1, std::min(total, static_cast<std::size_t>(cfg.train_fraction * static_cast<double>(total))));

  std::vector<std::size_t> nodes = node_ids;
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
  for (std::size_t node : nodes) {
    for (std::size_t f = 0; f < nf; ++f) {
      double mean = 0.0, sq = 0.0, count = 0.0;
      for (std::size_t t = 0; t < train_end; ++t) {
        if (!d.valid(t, node)) continue;
        const double v = d.value(t, node, f);
        mean += v;
        sq += v * v;
        count += 1.0;
      }
      if (count > 0) {
        mean /= count;
        sq = std::max(0.0, sq / count - mean * mean);
      }
      const double sigma = cfg.sigma ? *cfg.sigma : std::sqrt(sq);
      for (std::size_t t = 0; t < total; ++t) {
        double& v = out.values[(t * n + node) * nf + f];
        const double e = sigma * gauss(rng);
        v = cfg.mode == NoiseMode::ReplaceWhite ? mean + e : v + e;
      }
    }
  }
  return out;
}

std::vector<std::size_t> noisy_node_set(std::size_t n_nodes, std::size_t k, std::uint64_t seed) {
  if (k > n_nodes) throw ConfigError("cannot pick " + std::to_string(k) + " noisy nodes out of " + std::to_string(n_nodes));
  std::vector<std::size_t> perm(n_nodes);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  perm.resize(k);
  std::sort(perm.begin(), perm.end());
  return perm;
}

WindowedData::WindowedData(const SeriesDataset& d, const SplitConfig& cfg)
    : cfg_(cfg), n_nodes_(d.n_nodes()), n_features_(d.n_features()) {
  const std::size_t total = d.t_total();
  if (cfg.t_in == 0 || cfg.t_out == 0) throw ConfigError("t_in and t_out must be positive");
  if (cfg.batch_size == 0) throw ConfigError("batch_size must be positive");
  const auto counts = split_counts(total, cfg.ratios);
  const std::size_t span_len = cfg.t_in + cfg.t_out;
  double min_ratio = 1.0, rsum = 0.0;
  for (double r : cfg.ratios) rsum += r;
  for (double r : cfg.ratios)
    if (r > 0.0) min_ratio = std::min(min_ratio, r / rsum);
  if (static_cast<double>(span_len) > static_cast<double>(total) * min_ratio) {
    throw ConfigError("series of length " + std::to_string(total) + " is too short for windows of " +
                      std::to_string(span_len) + " ticks in every split");
  }
  seg_[0] = {0, counts[0]};
  seg_[1] = {counts[0], counts[0] + counts[1]};
  seg_[2] = {counts[0] + counts[1], total};

  scaler_.mean.assign(n_features_, 0.0);
  scaler_.std.assign(n_features_, 1.0);
  for (std::size_t f = 0; f < n_features_; ++f) {
    double mean = 0.0, count = 0.0;
    for (std::size_t t = seg_[0].first; t < seg_[0].second; ++t)
      for (std::size_t n = 0; n < n_nodes_; ++n)
        if (d.valid(t, n)) {
          mean += d.value(t, n, f);
          count += 1.0;
        }
    if (count == 0) throw NumericError("no valid training points to fit the scaler");
    mean /= count;
    double var = 0.0;
    for (std::size_t t = seg_[0].first; t < seg_[0].second; ++t)
      for (std::size_t n = 0; n < n_nodes_; ++n)
        if (d.valid(t, n)) var += (d.value(t, n, f) - mean) * (d.value(t, n, f) - mean);
    const double sd = std::sqrt(var / count);
    scaler_.mean[f] = mean;
    scaler_.std[f] = sd > 0.0 ? sd : 1.0;
  }

  scaled_.resize(d.values.size());
  mask_ = d.valid_mask;
  for (std::size_t t = 0; t < total; ++t)
    for (std::size_t n = 0; n < n_nodes_; ++n)
      for (std::size_t f = 0; f < n_features_; ++f) {
        const std::size_t i = (t * n_nodes_ + n) * n_features_ + f;
        scaled_[i] = d.valid(t, n) ? scaler_.transform(d.values[i], f) : 0.0;
      }

  std::vector<std::size_t>* parts[3] = {&train_, &val_, &test_};
  for (int p = 0; p < 3; ++p) {
    const auto [b, e] = seg_[p];
    for (std::size_t o = b; o + span_len <= e; ++o) parts[p]->push_back(o);
  }
}

const std::vector<std::size_t>& WindowedData::offsets(Part p) const {
  switch (p) {
    case Part::Train: return train_;
    case Part::Val: return val_;
    case Part::Test: return test_;
  }
  return train_;
}

std::pair<std::size_t, std::size_t> WindowedData::segment(Part p) const { return seg_[static_cast<int>(p)]; }

WindowedBatch WindowedData::make_batch(std::span<const std::size_t> offs) const {
  const std::size_t b = offs.size(), n = n_nodes_, nf = n_features_, t_in = cfg_.t_in, s = cfg_.t_out;
  WindowedBatch wb;
  wb.x = Tensor(Shape{b, t_in, n, nf});
  wb.y = Tensor(Shape{b, n, s});
  wb.y_mask = Tensor(Shape{b, n, s});
  wb.offsets.assign(offs.begin(), offs.end());
  for (std::size_t k = 0; k < b; ++k) {
    const std::size_t o = offs[k];
    std::copy_n(scaled_.begin() + static_cast<std::ptrdiff_t>(o * n * nf), t_in * n * nf,
                wb.x.data() + k * t_in * n * nf);
    for (std::size_t node = 0; node < n; ++node)
      for (std::size_t h = 0; h < s; ++h) {
        const std::size_t t = o + t_in + h;
        wb.y[(k * n + node) * s + h] = scaled_[(t * n + node) * nf];
        wb.y_mask[(k * n + node) * s + h] = mask_[t * n + node] ? 1.0 : 0.0;
      }
  }
  return wb;
}

std::vector<WindowedBatch> WindowedData::batches(Part p, std::size_t epoch) const {
  return batches(p, epoch, cfg_.batch_size);
}

std::vector<WindowedBatch> WindowedData::batches(Part p, std::size_t epoch, std::size_t batch_size) const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  std::vector<std::size_t> order = offsets(p);
  if (p == Part::Train) {
    Rng rng(cfg_.seed * 1000003u + epoch);
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<WindowedBatch> out;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    const std::size_t count = std::min(batch_size, order.size() - i);
    out.push_back(make_batch(std::span<const std::size_t>(order.data() + i, count)));
  }
  return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Parses a numeric cell; returns nullopt for empty/NaN cells.
std::optional<double> parse_cell(const std::string& raw, const std::string& file, std::size_t line_no) {
  const std::string c = trim(raw);
  if (c.empty() || c == "NaN" || c == "nan" || c == "NAN") return std::nullopt;
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(c, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != c.size()) {
    throw ParseError(file + ":" + std::to_string(line_no) + ": non-numeric cell '" + c + "'");
  }
  if (std::isnan(v)) return std::nullopt;
  if (!std::isfinite(v)) throw ParseError(file + ":" + std::to_string(line_no) + ": non-finite cell '" + c + "'");
  return v;
}

struct CsvTable {
  std::size_t cols = 0;
  std::vector<std::optional<double>> cells;
  std::size_t rows() const { return cols ? cells.size() / cols : 0; }
};

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  CsvTable t;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split_csv_line(line);
    if (t.cols == 0) t.cols = cells.size();
    if (cells.size() != t.cols) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(t.cols) +
                       " cells, found " + std::to_string(cells.size()));
    }
    for (const auto& c : cells) t.cells.push_back(parse_cell(c, path.string(), line_no));
  }
  if (t.cols == 0) throw ParseError(path.string() + ": empty file");
  return t;
}

}  // namespace

SeriesDataset load_csv_series(const std::filesystem::path& series_path, const std::filesystem::path& adjacency_path) {
  const CsvTable series = read_csv(series_path);
  const CsvTable adj = read_csv(adjacency_path);
  const std::size_t n = series.cols, total = series.rows();
  if (adj.cols != adj.rows()) {
    throw ParseError(adjacency_path.string() + ":" + std::to_string(adj.rows()) + ": adjacency is " +
                     std::to_string(adj.rows()) + "x" + std::to_string(adj.cols) + ", not square");
  }
  if (adj.cols != n) {
    throw ParseError(adjacency_path.string() + ":1: adjacency has " + std::to_string(adj.cols) +
                     " nodes but the series has " + std::to_string(n));
  }
  Tensor a(Shape{n, n});
  for (std::size_t i = 0; i < n * n; ++i) {
    if (!adj.cells[i]) {
      throw ParseError(adjacency_path.string() + ":" + std::to_string(i / n + 1) + ": missing adjacency entry");
    }
    a[i] = *adj.cells[i];
  }
  SeriesDataset d;
  try {
    d.graph = GraphSpec::from_adjacency(std::move(a));
  } catch (const std::exception& e) {
    throw ParseError(adjacency_path.string() + ": " + e.what());
  }
  d.values = Tensor(Shape{total, n, 1});
  d.valid_mask.assign(total * n, 0);
  for (std::size_t i = 0; i < total * n; ++i) {
    if (series.cells[i]) {
      d.values[i] = *series.cells[i];
      d.valid_mask[i] = 1;
    }
  }
  return d;
}

void save_dataset(const std::filesystem::path& path, const SeriesDataset& d) {
  Params p;
  p.add("values", d.values);
  p.add("adjacency", d.graph.adjacency);
  Tensor mask(Shape{d.t_total(), d.n_nodes()});
  for (std::size_t i = 0; i < d.valid_mask.size(); ++i) mask[i] = d.valid_mask[i];
  p.add("valid_mask", std::move(mask));
  if (!d.truth_correlation.empty()) p.add("truth_correlation", d.truth_correlation);
  save_params(path, p);
}

SeriesDataset load_dataset(const std::filesystem::path& path) {
  const Params p = load_params(path);
  for (const char* key : {"values", "adjacency", "valid_mask"}) {
    if (!p.contains(key)) throw ParseError(path.string() + ": dataset entry '" + key + "' missing");
  }
  SeriesDataset d;
  d.values = p.get("values");
  if (d.values.rank() != 3) throw ParseError(path.string() + ": values must be rank 3");
  d.graph = GraphSpec::from_adjacency(p.get("adjacency"));
  if (d.graph.n_nodes != d.n_nodes()) throw ParseError(path.string() + ": adjacency does not match values");
  const Tensor& mask = p.get("valid_mask");
  if (mask.size() != d.t_total() * d.n_nodes()) throw ParseError(path.string() + ": valid_mask has the wrong size");
  d.valid_mask.resize(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) d.valid_mask[i] = mask[i] != 0.0;
  if (p.contains("truth_correlation")) d.truth_correlation = p.get("truth_correlation");
  return d;
}

}  // namespace covreg
