#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "covreg/harness.hpp"
#include "json.hpp"

namespace covreg {

using Json = nlohmann::ordered_json;

// Timing and memory fields live under the "timing" key so that comparisons
// can drop them in one step.
Json to_json(const RunResult& r);
Json to_json(const Metrics& m);
Json to_json(const CnpComparison& c);
Json to_json(const CrossTermReport& r, bool with_values = false);
Json without_timing(Json j);

void write_json(const std::filesystem::path& path, const Json& j);

// Per-epoch curve: epoch,train_loss,val_rmse.
void write_trace_csv(const std::filesystem::path& path, const RunResult& r);
void write_alignment_csv(const std::filesystem::path& path, const AlignmentTrace& t);
void write_basis_csv(const std::filesystem::path& path, const BasisDecompositionTrace& t);
void write_cross_term_csv(const std::filesystem::path& path, const CrossTermReport& r);

// Header of sweep.csv; the column set is part of the file contract.
const std::vector<std::string>& sweep_csv_header();
void write_sweep_csv(const std::filesystem::path& path, const SweepResult& s);
std::string sweep_csv(const SweepResult& s);

}  // namespace covreg
