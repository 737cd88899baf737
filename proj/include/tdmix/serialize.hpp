#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "tdmix/approx.hpp"
#include "tdmix/chain.hpp"
#include "tdmix/decomp.hpp"
#include "tdmix/td.hpp"

namespace tdmix::serialize {

using nlohmann::json;

// Doubles that must round-trip bit-exactly are stored as C hex-float strings.
[[nodiscard]] std::string double_to_hex(double v);
[[nodiscard]] double double_from_hex(const std::string& s);
[[nodiscard]] json doubles_to_hex(std::span<const double> xs);
[[nodiscard]] std::vector<double> doubles_from_hex(const json& j);

[[nodiscard]] json kernel_to_json(const chain::TransitionKernel& kernel);
[[nodiscard]] chain::TransitionKernel kernel_from_json(const json& j);

[[nodiscard]] json model_to_json(const approx::ValueModel& model);
[[nodiscard]] approx::ValueModel model_from_json(const json& j);

void write_text(const std::filesystem::path& path, const std::string& content);
[[nodiscard]] std::string read_text(const std::filesystem::path& path);
[[nodiscard]] json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const json& j);

void write_trajectory_csv(const std::filesystem::path& path, const chain::Trajectory& traj);
void write_history_csv(const std::filesystem::path& path, const td::IterateHistory& history,
                       const std::vector<double>& err_at_checkpoints);
void write_checkpoints_json(const std::filesystem::path& path, const td::IterateHistory& history);
void write_decomposition_csv(const std::filesystem::path& path, const decomp::Decomposition& d);

/// Column-oriented CSV writer; columns must share a length.
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& headers,
               const std::vector<std::vector<double>>& columns);

/// FNV-1a checksum of a file's bytes, hex-encoded; used by run manifests.
[[nodiscard]] std::string file_checksum(const std::filesystem::path& path);

/// Minimal log-log SVG plot: one or more named series plus optional reference
/// slope guides drawn through the first point of the first series.
struct SvgSeries {
    std::string name;
    std::vector<double> xs;
    std::vector<double> ys;
    std::string color = "#1f77b4";
};

void write_loglog_svg(const std::filesystem::path& path, const std::vector<SvgSeries>& series,
                      const std::vector<double>& reference_slopes, const std::string& title);

}  // namespace tdmix::serialize
