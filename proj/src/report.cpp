#include "covreg/report.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "covreg/errors.hpp"

namespace covreg {

namespace {

std::string num(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

template <class T>
Json optional_json(const std::optional<T>& v) {
  return v ? Json(*v) : Json(nullptr);
}

}  // namespace

Json to_json(const Metrics& m) {
  return Json{{"mae", m.mae}, {"mape", m.mape}, {"rmse", m.rmse}, {"count", m.count}, {"mape_count", m.mape_count}};
}

Json to_json(const RunResult& r) {
  Json j;
  j["name"] = r.name;
  j["model"] = r.model;
  j["objective"] = r.objective;
  j["seed"] = r.seed;
  j["lambda"] = r.lambda;
  j["metrics"] = to_json(r.test);
  Json hs = Json::array();
  for (const auto& h : r.horizons) {
    Json hj = to_json(h.metrics);
    hj["horizon"] = h.horizon;
    hs.push_back(hj);
  }
  j["horizons"] = hs;
  j["accuracy"] = optional_json(r.accuracy);
  j["nll"] = optional_json(r.nll);
  j["gp_rmse"] = optional_json(r.gp_rmse);
  j["training"] = Json{{"epochs_run", r.epochs_run},
                       {"best_epoch", r.best_epoch},
                       {"steps", r.steps},
                       {"train_loss", r.train_loss},
                       {"val_rmse", r.val_rmse}};
  Json d;
  if (r.cross_term) {
    const auto& c = *r.cross_term;
    d["cross_term"] = Json{{"zero_fraction", c.zero_fraction},
                           {"term_zero_fraction", c.term_zero_fraction},
                           {"epsilon", c.epsilon},
                           {"pair_count", c.pair_count},
                           {"value_count", c.value_count},
                           {"exhaustive", c.exhaustive},
                           {"seed", c.seed},
                           {"histogram_log10_lo", c.histogram.log10_lo},
                           {"histogram_zero", c.histogram.zero_count},
                           {"histogram", c.histogram.counts}};
  } else {
    d["cross_term"] = nullptr;
  }
  if (r.alignment) {
    d["alignment"] = Json{{"initial_frobenius_gap", r.alignment->initial_gap},
                          {"final_frobenius_gap", r.alignment->final_gap},
                          {"steps", r.alignment->steps}};
  } else {
    d["alignment"] = nullptr;
  }
  d["median_component_correlation"] = optional_json(r.median_correlation);
  d["gram_same_class_mean"] = optional_json(r.gram_same_class);
  d["gram_cross_class_mean"] = optional_json(r.gram_cross_class);
  j["diagnostics"] = d;
  j["timing"] = Json{{"wall_time_s", r.wall_time_s},
                     {"cov_time_s", r.cov_time_s},
                     {"cov_time_per_step_s", r.cov_time_per_step_s},
                     {"peak_mem_bytes", r.peak_mem_bytes},
                     {"cov_peak_mem_bytes", r.cov_peak_mem_bytes}};
  return j;
}

Json to_json(const CnpComparison& c) {
  return Json{{"nll_arm", to_json(c.nll_arm)}, {"cov_arm", to_json(c.cov_arm)}, {"gp_oracle_rmse", c.gp_rmse}};
}

Json to_json(const CrossTermReport& r, bool with_values) {
  Json j{{"zero_fraction", r.zero_fraction},
         {"term_zero_fraction", r.term_zero_fraction},
         {"epsilon", r.epsilon},
         {"pair_count", r.pair_count},
         {"value_count", r.values.size()},
         {"exhaustive", r.exhaustive},
         {"seed", r.seed},
         {"histogram_log10_lo", r.histogram.log10_lo},
         {"histogram_log10_hi", r.histogram.log10_hi},
         {"histogram_zero", r.histogram.zero_count},
         {"histogram", r.histogram.counts}};
  if (with_values) j["values"] = r.values;
  return j;
}

Json without_timing(Json j) {
  if (j.is_object()) {
    j.erase("timing");
    for (auto& [k, v] : j.items()) v = without_timing(v);
  } else if (j.is_array()) {
    for (auto& v : j) v = without_timing(v);
  }
  return j;
}

void write_json(const std::filesystem::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

void write_trace_csv(const std::filesystem::path& path, const RunResult& r) {
  std::ostringstream out;
  out << "epoch,train_loss,val_rmse\n";
  for (std::size_t e = 0; e < r.train_loss.size(); ++e) {
    out << e + 1 << "," << num(r.train_loss[e]) << ",";
    if (e < r.val_rmse.size()) out << num(r.val_rmse[e]);
    out << "\n";
  }
  write_text(path, out.str());
}

void write_alignment_csv(const std::filesystem::path& path, const AlignmentTrace& t) {
  std::ostringstream out;
  out << "time,frobenius_gap";
  for (std::size_t n : t.nodes) out << ",gram_" << n << "_" << n << ",target_" << n << "_" << n;
  for (const auto& [i, j] : t.pairs) out << ",gram_" << i << "_" << j << ",target_" << i << "_" << j;
  out << "\n";
  for (std::size_t s = 0; s < t.time_index.size(); ++s) {
    out << t.time_index[s] << "," << num(t.frobenius_gap[s]);
    for (std::size_t k = 0; k < t.nodes.size(); ++k) out << "," << num(t.gram_diag[k][s]) << "," << num(t.target_var[k][s]);
    for (std::size_t p = 0; p < t.pairs.size(); ++p)
      out << "," << num(t.gram_offdiag[p][s]) << "," << num(t.target_cov[p][s]);
    out << "\n";
  }
  write_text(path, out.str());
}

void write_basis_csv(const std::filesystem::path& path, const BasisDecompositionTrace& t) {
  std::ostringstream out;
  out << "time,label,prediction";
  for (std::size_t i = 0; i < t.components.size(); ++i) out << ",component_" << i;
  out << "\n";
  for (std::size_t s = 0; s < t.time_index.size(); ++s) {
    out << t.time_index[s] << "," << num(t.label[s]) << "," << num(t.prediction[s]);
    for (const auto& c : t.components) out << "," << num(c[s]);
    out << "\n";
  }
  write_text(path, out.str());
}

void write_cross_term_csv(const std::filesystem::path& path, const CrossTermReport& r) {
  std::ostringstream out;
  out << "bin_log10_lo,bin_log10_hi,count\n";
  out << "zero,zero," << r.histogram.zero_count << "\n";
  for (std::size_t k = 0; k < r.histogram.counts.size(); ++k) {
    const int lo = r.histogram.log10_lo + static_cast<int>(k);
    out << lo << "," << lo + 1 << "," << r.histogram.counts[k] << "\n";
  }
  write_text(path, out.str());
}

const std::vector<std::string>& sweep_csv_header() {
  static const std::vector<std::string> h{"axis",          "value",          "arm",
                                          "lambda",        "n_seeds",        "metric",
                                          "metric_mean",   "metric_std",     "wall_time_s",
                                          "peak_mem_bytes", "cov_time_per_step_s", "cov_peak_mem_bytes",
                                          "zero_fraction", "frobenius_gap"};
  return h;
}

std::string sweep_csv(const SweepResult& s) {
  std::ostringstream out;
  const auto& h = sweep_csv_header();
  for (std::size_t i = 0; i < h.size(); ++i) out << (i ? "," : "") << h[i];
  out << "\n";
  for (const SweepRow& r : s.rows) {
    out << r.axis << "," << num(r.value) << "," << r.arm << "," << num(r.lambda) << "," << r.n_seeds << "," << r.metric
        << "," << num(r.metric_mean) << "," << num(r.metric_std) << "," << num(r.wall_time_s) << ","
        << num(r.peak_mem_bytes) << "," << num(r.cov_time_per_step_s) << "," << num(r.cov_peak_mem_bytes) << ","
        << num(r.zero_fraction) << "," << num(r.frobenius_gap) << "\n";
  }
  return out.str();
}

void write_sweep_csv(const std::filesystem::path& path, const SweepResult& s) { write_text(path, sweep_csv(s)); }

}  // namespace covreg
