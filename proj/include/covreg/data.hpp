#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "covreg/graph.hpp"
#include "covreg/params.hpp"
#include "covreg/tensor.hpp"

namespace covreg {

// Per-feature z-score scaling. A fresh scaler is the identity.
struct Scaler {
  std::vector<double> mean;
  std::vector<double> std;

  bool fitted() const { return !mean.empty(); }
  double transform(double v, std::size_t feature) const;
  double inverse(double v, std::size_t feature) const;
};

struct SeriesDataset {
  Tensor values;  // [T x N x F]
  GraphSpec graph;
  Scaler scaler;
  std::vector<std::uint8_t> valid_mask;  // [T x N], 1 = valid
  // Pearson correlation between nodes of the noise-free signal, [N x N].
  // Empty when unknown (loaded data).
  Tensor truth_correlation;

  std::size_t t_total() const { return values.dim(0); }
  std::size_t n_nodes() const { return values.dim(1); }
  std::size_t n_features() const { return values.dim(2); }
  double value(std::size_t t, std::size_t n, std::size_t f = 0) const {
    return values[(t * n_nodes() + n) * n_features() + f];
  }
  bool valid(std::size_t t, std::size_t n) const { return valid_mask[t * n_nodes() + n] != 0; }
};

enum class GraphKind { Ring, Grid, RandomGeometric };
GraphKind parse_graph_kind(const std::string& s);
std::string to_string(GraphKind k);

// Adjacency of the given kind: ring neighbours, a 4-neighbour grid filled
// row-major with ceil(sqrt(n)) columns, or a unit-square geometric graph.
Tensor make_adjacency(std::size_t n_nodes, GraphKind kind, double radius, std::uint64_t seed);

struct TrafficConfig {
  std::size_t n_nodes = 20;
  std::size_t t_total = 2880;
  GraphKind graph_kind = GraphKind::Ring;
  double geometric_radius = 0.35;
  std::size_t period = 288;  // ticks per synthetic day
  std::size_t phase_groups = 4;
  double level = 60.0;
  double amplitude = 6.0;
  double dip_depth = 12.0;
  double dip_width = 10.0;
  // Latent incident state z: z_t = ar·((1−d)·z_{t−1} + d·P·z_{t−1}) + shock·ε_t,
  // with P the row-normalized adjacency and d the diffusion weight.
  double diffusion = 0.5;
  double ar = 0.9;
  double shock_sigma = 1.0;
  double noise_sigma = 0.5;  // observation noise
  std::uint64_t seed = 0;
};

// Node n belongs to phase group floor(n·groups/N); nodes in one group share
// their phase, so contiguous nodes on a ring or grid row move together.
SeriesDataset generate_traffic_like(const TrafficConfig& cfg);

struct ToyConfig {
  std::size_t n_classes = 4;
  std::size_t n_per_class = 150;
  std::size_t dim = 16;
  double separation = 3.0;  // scale of the class means
  double spread = 1.0;      // within-class standard deviation
  double ambiguous_fraction = 0.1;
  std::uint64_t seed = 0;
};

struct LabeledSet {
  Tensor x;  // [n x dim]
  Tensor y;  // [n x classes], one-hot
  std::vector<std::size_t> labels;
  std::vector<std::size_t> ambiguous;  // indices of ambiguous samples, ascending

  std::size_t size() const { return labels.size(); }
  LabeledSet subset(const std::vector<std::size_t>& idx) const;
};

// Gaussian blobs around random class means. A fraction of the samples are
// drawn around the midpoint of two class means and labelled with one of them.
LabeledSet generate_toy_classification(const ToyConfig& cfg);

struct LabeledSplit {
  LabeledSet train, val, test;
};

// Seeded shuffle followed by a split by `ratios` (train, val, test).
LabeledSplit split_labeled(const LabeledSet& set, const std::vector<double>& ratios, std::uint64_t seed);

enum class NoiseMode { ReplaceWhite, AddWhite };
NoiseMode parse_noise_mode(const std::string& s);
std::string to_string(NoiseMode m);

struct NoiseConfig {
  NoiseMode mode = NoiseMode::ReplaceWhite;
  // Standard deviation; when unset, each node uses its own standard deviation
  // over the first `train_fraction` of the series.
  std::optional<double> sigma;
  double train_fraction = 0.7;
  std::uint64_t seed = 0;
};

// Replaced nodes are centered on the node's mean over the train fraction.
SeriesDataset inject_node_noise(const SeriesDataset& d, const std::vector<std::size_t>& node_ids,
                                const NoiseConfig& cfg);

// The first k entries of a seeded permutation of the nodes, so the noisy set
// for k is contained in the noisy set for any larger k.
std::vector<std::size_t> noisy_node_set(std::size_t n_nodes, std::size_t k, std::uint64_t seed);

struct WindowedBatch {
  Tensor x;       // [b x T_in x N x F], scaled
  Tensor y;       // [b x N x S], scaled first feature, S = T_out
  Tensor y_mask;  // [b x N x S], 1 = valid
  std::vector<std::size_t> offsets;  // start tick of each window
};

struct SplitConfig {
  std::size_t t_in = 12;
  std::size_t t_out = 3;
  std::vector<double> ratios{0.7, 0.1, 0.2};
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

enum class Part { Train, Val, Test };

// Chronological split into contiguous segments. A window lies entirely inside
// one segment. The scaler is fit on valid train points only; invalid inputs
// are filled with the scaled mean (0).
class WindowedData {
 public:
  WindowedData(const SeriesDataset& d, const SplitConfig& cfg);

  const Scaler& scaler() const { return scaler_; }
  const SplitConfig& config() const { return cfg_; }
  std::size_t n_nodes() const { return n_nodes_; }
  std::size_t n_features() const { return n_features_; }
  const std::vector<std::size_t>& offsets(Part p) const;
  // Tick range [begin, end) of each segment.
  std::pair<std::size_t, std::size_t> segment(Part p) const;

  // Train batches are reshuffled per epoch from (seed, epoch); validation and
  // test batches keep chronological order.
  std::vector<WindowedBatch> batches(Part p, std::size_t epoch = 0) const;
  std::vector<WindowedBatch> batches(Part p, std::size_t epoch, std::size_t batch_size) const;
  WindowedBatch make_batch(std::span<const std::size_t> offsets) const;

 private:
  SplitConfig cfg_;
  Scaler scaler_;
  std::size_t n_nodes_ = 0, n_features_ = 0;
  std::vector<double> scaled_;
  std::vector<std::uint8_t> mask_;
  std::vector<std::size_t> train_, val_, test_;
  std::pair<std::size_t, std::size_t> seg_[3];
};

// Rows are ticks, columns are nodes, no header. Empty or NaN cells are kept
// as 0 with valid_mask false. The adjacency file holds an N x N matrix.
SeriesDataset load_csv_series(const std::filesystem::path& series_path, const std::filesystem::path& adjacency_path);

// Dataset cache in the checkpoint container.
void save_dataset(const std::filesystem::path& path, const SeriesDataset& d);
SeriesDataset load_dataset(const std::filesystem::path& path);

}  // namespace covreg
