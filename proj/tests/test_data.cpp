#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "covreg/data.hpp"
#include "covreg/diagnostics.hpp"
#include "covreg/errors.hpp"

using namespace covreg;

namespace {

std::filesystem::path temp_dir() {
  auto p = std::filesystem::temp_directory_path() / "covreg_test_data";
  std::filesystem::create_directories(p);
  return p;
}

std::filesystem::path write_file(const std::string& name, const std::string& text) {
  auto p = temp_dir() / name;
  std::ofstream(p) << text;
  return p;
}

std::vector<double> node_series(const SeriesDataset& d, std::size_t node, std::size_t begin = 0,
                                std::size_t end = 0) {
  if (end == 0) end = d.t_total();
  std::vector<double> s;
  for (std::size_t t = begin; t < end; ++t) s.push_back(d.value(t, node));
  return s;
}

TrafficConfig small_traffic() {
  TrafficConfig c;
  c.n_nodes = 8;
  c.t_total = 1000;
  c.period = 100;
  c.seed = 3;
  return c;
}

}  // namespace

TEST(Traffic, NoiseFreeNoDiffusionIsPeriodic) {
  TrafficConfig c = small_traffic();
  c.noise_sigma = 0;
  c.shock_sigma = 0;
  c.diffusion = 0;
  SeriesDataset d = generate_traffic_like(c);
  for (std::size_t n = 0; n < c.n_nodes; ++n) {
    auto a = node_series(d, n, 0, c.t_total - c.period);
    auto b = node_series(d, n, c.period, c.t_total);
    for (std::size_t t = 0; t < a.size(); ++t) ASSERT_NEAR(a[t], b[t], 1e-9);
    EXPECT_NEAR(*pearson(a, b), 1.0, 1e-12);
  }
}

TEST(Traffic, SamePhaseNodesAreHighlyCorrelated) {
  TrafficConfig c = small_traffic();
  c.noise_sigma = 0;
  c.shock_sigma = 0;
  SeriesDataset d = generate_traffic_like(c);
  // 8 nodes in 4 groups: nodes 0 and 1 share a phase.
  EXPECT_GT(*pearson(node_series(d, 0), node_series(d, 1)), 0.99);
  EXPECT_GT(d.truth_correlation.at(0, 1), 0.99);
  EXPECT_LT(d.truth_correlation.at(0, 6), d.truth_correlation.at(0, 1));
}

TEST(Traffic, FixedSeedIsBitwiseReproducible) {
  SeriesDataset a = generate_traffic_like(small_traffic());
  SeriesDataset b = generate_traffic_like(small_traffic());
  EXPECT_EQ(a.values, b.values);
  EXPECT_EQ(a.graph.adjacency, b.graph.adjacency);
  TrafficConfig c = small_traffic();
  c.seed = 4;
  EXPECT_NE(generate_traffic_like(c).values, a.values);
}

TEST(Traffic, Errors) {
  TrafficConfig c = small_traffic();
  c.n_nodes = 1;
  EXPECT_THROW(generate_traffic_like(c), ConfigError);
  c = small_traffic();
  c.diffusion = 1.5;
  EXPECT_THROW(generate_traffic_like(c), ConfigError);
  EXPECT_THROW(parse_graph_kind("torus"), ConfigError);
}

TEST(Graph, AdjacencyKinds) {
  Tensor ring = make_adjacency(5, GraphKind::Ring, 0, 0);
  EXPECT_EQ(ring.at(0, 4), 1.0);
  EXPECT_EQ(ring.at(0, 2), 0.0);
  Tensor grid = make_adjacency(6, GraphKind::Grid, 0, 0);  // 3 columns, 2 rows
  EXPECT_EQ(grid.at(0, 1), 1.0);
  EXPECT_EQ(grid.at(0, 3), 1.0);
  EXPECT_EQ(grid.at(2, 3), 0.0);
  Tensor geo = make_adjacency(10, GraphKind::RandomGeometric, 0.5, 1);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_EQ(geo.at(i, i), 0.0);
    for (std::size_t j = 0; j < 10; ++j) EXPECT_EQ(geo.at(i, j), geo.at(j, i));
  }
  EXPECT_EQ(make_adjacency(10, GraphKind::RandomGeometric, 0.5, 1), geo);
}

TEST(Toy, ZeroSpreadIsSeparableByNearestMean) {
  ToyConfig c;
  c.spread = 1e-9;
  c.ambiguous_fraction = 0;
  LabeledSet s = generate_toy_classification(c);
  ASSERT_EQ(s.size(), c.n_classes * c.n_per_class);
  std::vector<std::vector<double>> means(c.n_classes, std::vector<double>(c.dim, 0.0));
  std::vector<double> counts(c.n_classes, 0.0);
  for (std::size_t i = 0; i < s.size(); ++i) {
    counts[s.labels[i]] += 1;
    for (std::size_t j = 0; j < c.dim; ++j) means[s.labels[i]][j] += s.x.at(i, j);
  }
  for (std::size_t k = 0; k < c.n_classes; ++k)
    for (auto& v : means[k]) v /= counts[k];
  std::size_t correct = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t k = 0; k < c.n_classes; ++k) {
      double d = 0;
      for (std::size_t j = 0; j < c.dim; ++j) d += (s.x.at(i, j) - means[k][j]) * (s.x.at(i, j) - means[k][j]);
      if (d < best_d) best_d = d, best = k;
    }
    correct += best == s.labels[i];
  }
  EXPECT_EQ(correct, s.size());
}

TEST(Toy, OneHotLabelGram) {
  LabeledSet s = generate_toy_classification(ToyConfig{});
  for (std::size_t i = 0; i < 40; ++i)
    for (std::size_t j = 0; j < 40; ++j) {
      double g = 0;
      for (std::size_t k = 0; k < s.y.cols(); ++k) g += s.y.at(i, k) * s.y.at(j, k);
      EXPECT_EQ(g, s.labels[i] == s.labels[j] ? 1.0 : 0.0);
    }
}

TEST(Toy, AmbiguousIndicesReproducible) {
  ToyConfig c;
  c.seed = 9;
  LabeledSet a = generate_toy_classification(c), b = generate_toy_classification(c);
  EXPECT_EQ(a.ambiguous, b.ambiguous);
  EXPECT_EQ(a.x, b.x);
  EXPECT_NEAR(static_cast<double>(a.ambiguous.size()) / a.size(), c.ambiguous_fraction, 0.02);
  EXPECT_TRUE(std::is_sorted(a.ambiguous.begin(), a.ambiguous.end()));
}

TEST(Toy, SplitPartitionsAllSamples) {
  LabeledSet s = generate_toy_classification(ToyConfig{});
  LabeledSplit sp = split_labeled(s, {0.6, 0.2, 0.2}, 1);
  EXPECT_EQ(sp.train.size() + sp.val.size() + sp.test.size(), s.size());
  EXPECT_NEAR(static_cast<double>(sp.train.size()) / s.size(), 0.6, 0.01);
  EXPECT_THROW(split_labeled(s, {1, 1}, 1), ConfigError);
}

TEST(Noise, EmptyNodeSetLeavesDataUnchanged) {
  SeriesDataset d = generate_traffic_like(small_traffic());
  SeriesDataset out = inject_node_noise(d, {}, NoiseConfig{});
  EXPECT_EQ(out.values, d.values);
  EXPECT_EQ(out.valid_mask, d.valid_mask);
}

TEST(Noise, ReplacedNodeIsWhite) {
  TrafficConfig c = small_traffic();
  c.t_total = 2000;
  SeriesDataset d = generate_traffic_like(c);
  SeriesDataset out = inject_node_noise(d, {2}, NoiseConfig{});
  auto s = node_series(out, 2);
  std::vector<double> a(s.begin(), s.end() - 1), b(s.begin() + 1, s.end());
  EXPECT_LT(std::abs(*pearson(a, b)), 0.1);
  // Other nodes untouched.
  EXPECT_EQ(node_series(out, 3), node_series(d, 3));
  EXPECT_THROW(inject_node_noise(d, {8}, NoiseConfig{}), DimensionError);
}

TEST(Noise, AddModeKeepsSignal) {
  SeriesDataset d = generate_traffic_like(small_traffic());
  NoiseConfig nc;
  nc.mode = NoiseMode::AddWhite;
  nc.sigma = 0.1;
  SeriesDataset out = inject_node_noise(d, {0}, nc);
  EXPECT_GT(*pearson(node_series(out, 0), node_series(d, 0)), 0.99);
}

TEST(Noise, NestedNodeSets) {
  auto s5 = noisy_node_set(20, 5, 7), s15 = noisy_node_set(20, 15, 7);
  EXPECT_TRUE(std::includes(s15.begin(), s15.end(), s5.begin(), s5.end()));
  EXPECT_THROW(noisy_node_set(20, 21, 7), ConfigError);
}

TEST(Windowing, AllTrainWhenRatiosAreOneZeroZero) {
  SeriesDataset d = generate_traffic_like(small_traffic());
  SplitConfig sc;
  sc.ratios = {1, 0, 0};
  WindowedData w(d, sc);
  EXPECT_EQ(w.offsets(Part::Train).size(), d.t_total() - sc.t_in - sc.t_out + 1);
  EXPECT_TRUE(w.offsets(Part::Val).empty());
  EXPECT_TRUE(w.offsets(Part::Test).empty());
}

TEST(Windowing, ChronologicalAndInsideSegments) {
  SeriesDataset d = generate_traffic_like(small_traffic());
  SplitConfig sc;
  WindowedData w(d, sc);
  const auto& tr = w.offsets(Part::Train);
  const auto& te = w.offsets(Part::Test);
  ASSERT_FALSE(tr.empty());
  ASSERT_FALSE(te.empty());
  EXPECT_GT(*std::min_element(te.begin(), te.end()), *std::max_element(tr.begin(), tr.end()));
  for (Part p : {Part::Train, Part::Val, Part::Test}) {
    auto [b, e] = w.segment(p);
    for (std::size_t o : w.offsets(p)) {
      EXPECT_GE(o, b);
      EXPECT_LE(o + sc.t_in + sc.t_out, e);
    }
  }
}

TEST(Windowing, BatchContentsAndShuffling) {
  SeriesDataset d = generate_traffic_like(small_traffic());
  SplitConfig sc;
  sc.batch_size = 16;
  WindowedData w(d, sc);
  auto b0 = w.batches(Part::Train, 0), b0again = w.batches(Part::Train, 0), b1 = w.batches(Part::Train, 1);
  EXPECT_EQ(b0[0].offsets, b0again[0].offsets);
  EXPECT_NE(b0[0].offsets, b1[0].offsets);
  const WindowedBatch& b = b0[0];
  EXPECT_EQ(b.x.shape(), (Shape{16, sc.t_in, 8, 1}));
  EXPECT_EQ(b.y.shape(), (Shape{16, 8, sc.t_out}));
  // Targets are the scaled ticks right after the input window.
  const std::size_t o = b.offsets[3];
  const Scaler& s = w.scaler();
  for (std::size_t n = 0; n < 8; ++n)
    for (std::size_t h = 0; h < sc.t_out; ++h)
      EXPECT_NEAR(s.inverse(b.y[(3 * 8 + n) * sc.t_out + h], 0), d.value(o + sc.t_in + h, n), 1e-9);
  auto test = w.batches(Part::Test);
  EXPECT_TRUE(std::is_sorted(test[0].offsets.begin(), test[0].offsets.end()));
}

TEST(Windowing, ScalerRoundTripAndTrainOnlyFit) {
  SeriesDataset d = generate_traffic_like(small_traffic());
  WindowedData w(d, SplitConfig{});
  const Scaler& s = w.scaler();
  ASSERT_TRUE(s.fitted());
  EXPECT_GT(s.std[0], 0.0);
  for (double v : {-3.0, 0.0, 57.25, 1e3}) EXPECT_NEAR(s.inverse(s.transform(v, 0), 0), v, 1e-12);
  auto [b, e] = w.segment(Part::Train);
  double mean = 0;
  for (std::size_t t = b; t < e; ++t)
    for (std::size_t n = 0; n < 8; ++n) mean += d.value(t, n);
  EXPECT_NEAR(s.mean[0], mean / static_cast<double>((e - b) * 8), 1e-9);
}

TEST(Windowing, TooShortSeries) {
  TrafficConfig c = small_traffic();
  c.t_total = 40;
  SeriesDataset d = generate_traffic_like(c);
  EXPECT_THROW(WindowedData(d, SplitConfig{}), ConfigError);
}

TEST(Csv, WellFormedAndNaNCells) {
  auto series = write_file("s.csv", "1,2\n3,NaN\n5,\n");
  auto adj = write_file("a.csv", "0,1\n1,0\n");
  SeriesDataset d = load_csv_series(series, adj);
  EXPECT_EQ(d.values.shape(), (Shape{3, 2, 1}));
  EXPECT_EQ(d.value(2, 0), 5.0);
  EXPECT_TRUE(d.valid(1, 0));
  EXPECT_FALSE(d.valid(1, 1));
  EXPECT_FALSE(d.valid(2, 1));
  EXPECT_EQ(d.truth_correlation.size(), 0u);
}

TEST(Csv, ErrorsCarryLineNumbers) {
  auto adj2 = write_file("a2.csv", "0,1\n1,0\n");
  auto adj3 = write_file("a3.csv", "0,1,0\n1,0,1\n0,1,0\n");
  auto ok = write_file("ok.csv", "1,2\n3,4\n");
  auto ragged = write_file("ragged.csv", "1,2\n3\n");
  auto text = write_file("text.csv", "1,2\n3,abc\n");
  auto expect_line = [](const std::filesystem::path& s, const std::filesystem::path& a, const std::string& tag) {
    try {
      load_csv_series(s, a);
      FAIL() << "accepted bad input";
    } catch (const ParseError& e) {
      EXPECT_NE(std::string(e.what()).find(tag), std::string::npos) << e.what();
    }
  };
  expect_line(ragged, adj2, "ragged.csv:2");
  expect_line(text, adj2, "text.csv:2");
  expect_line(ok, adj3, "a3.csv");
}

TEST(DatasetCache, RoundTrip) {
  TrafficConfig c = small_traffic();
  SeriesDataset d = inject_node_noise(generate_traffic_like(c), {1}, NoiseConfig{});
  d.valid_mask[5] = 0;
  auto path = temp_dir() / "cache.ckpt";
  save_dataset(path, d);
  SeriesDataset back = load_dataset(path);
  EXPECT_EQ(back.values, d.values);
  EXPECT_EQ(back.valid_mask, d.valid_mask);
  EXPECT_EQ(back.graph.adjacency, d.graph.adjacency);
  EXPECT_EQ(back.truth_correlation, d.truth_correlation);
}
