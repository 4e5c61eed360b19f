#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "planattr/attribution.hpp"
#include "planattr/blocksworld.hpp"
#include "planattr/gateway.hpp"
#include "planattr/memory.hpp"

namespace planattr::harness {

namespace fs = std::filesystem;

// Everything a run depends on. Loaded from JSON; unknown keys are rejected so
// a typo cannot silently fall back to a default.
struct ExperimentConfig {
    std::string dataset;  // JSONL path; empty means generate from `generate`
    bw::DatasetOptions generate{600, 3, 6, 2, 1};
    std::size_t train_size = 100;
    std::size_t validation_size = 500;

    std::string backend_url;  // empty means the in-process planner mock
    std::uint64_t mock_seed = 0;
    std::size_t parallelism = 4;
    bool cache = true;

    std::string memory = "none";  // none | bc | of | reference
    std::size_t learn_rounds = 1;
    std::string insights_path;    // reference insights file, optional
    std::int64_t threshold = memory::kDefaultVisibilityThreshold;

    bool fine_grained = false;
    bool with_constraints = true;
    bool ablation = true;  // also evaluate without constraints
    std::size_t sample_cap = 200;
    std::uint64_t seed = 1;
    std::size_t max_tokens = 512;
    attr::Space space = attr::Space::Probability;
    attr::Dimension norm = attr::Dimension::PerRow;  // heatmaps and horizon curves
    std::string out_dir = "out";

    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig load(const std::string& path);
    nlohmann::json to_json() const;
    // Hash of every field that can change results (not out_dir, not parallelism).
    std::string hash() const;
    void check() const;  // throws ConfigError
};

std::shared_ptr<lm::Backend> make_backend(const ExperimentConfig& config);
lm::GatewayOptions gateway_options(const ExperimentConfig& config);

std::vector<bw::Instance> load_or_generate(const ExperimentConfig& config);

struct Split {
    std::vector<bw::Instance> train;
    std::vector<bw::Instance> validation;
};

// Seeded Fisher-Yates shuffle, then the first train_size / next
// validation_size. Throws InsufficientData.
Split split_dataset(const std::vector<bw::Instance>& instances, std::uint64_t seed, std::size_t train_size = 100,
                    std::size_t validation_size = 500);

// Deterministic sample of at most `cap` instances, returned in input order.
std::vector<bw::Instance> sample_instances(const std::vector<bw::Instance>& instances, std::size_t cap,
                                           std::uint64_t seed);

inline constexpr std::size_t kMaxBin = 12;
// Optimal length rounded up to the next even number, clamped to [2, 12].
std::size_t step_bin(std::size_t optimal_length);

struct EvalRecord {
    std::string id;
    std::size_t optimal_length = 0;
    std::string plan_text;
    bool correct = false;
    std::optional<std::size_t> failure_index;
    std::string violation;  // empty when none
    std::string reason;     // empty on success

    nlohmann::json to_json() const;
    static EvalRecord from_json(const nlohmann::json& j);
};

struct BinStats {
    std::size_t total = 0;
    std::size_t correct = 0;
    double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

struct EvalResult {
    std::string condition;  // "with_constraints" | "without_constraints"
    std::vector<EvalRecord> records;  // instance order
    BinStats overall;
    std::map<std::size_t, BinStats> bins;  // every bin 2..12 present
};

struct EvalOptions {
    bool with_constraints = true;
    std::optional<std::vector<std::string>> insights;
    std::size_t max_tokens = 512;
    std::size_t parallelism = 4;
    std::string records_dir;  // per-instance result files; empty disables resumption
    std::string config_hash;
};

EvalResult aggregate_eval(std::string condition, std::vector<EvalRecord> records);

// Assembles, generates, parses and validates each instance. Per-instance
// errors become failed records; nothing aborts the run.
EvalResult run_planning_eval(lm::Gateway& gateway, const std::vector<bw::Instance>& instances,
                             const EvalOptions& options);

struct InstanceAttribution {
    std::string id;
    std::string plan_text;
    attr::PlanAttribution result;
};

struct AttributionFailure {
    std::string id;
    ErrorKind kind = ErrorKind::IoError;
    std::string reason;
};

struct HorizonPoint {
    double mean = 0.0;
    std::size_t tokens = 0;
    std::size_t instances = 0;
};

struct PairwiseCell {
    double sum = 0.0;
    std::size_t count = 0;
    double mean() const { return count ? sum / static_cast<double>(count) : 0.0; }
};

struct AttributionStudy {
    std::vector<std::string> sampled;  // instance ids, input order
    std::vector<InstanceAttribution> instances;
    std::vector<AttributionFailure> failures;
    attr::Dimension norm = attr::Dimension::PerRow;
    std::vector<std::pair<prompt::SegmentId, double>> components;  // mean across instances
    std::map<std::size_t, HorizonPoint> horizon;                  // Question row
    // (row segment, step, action) and (row segment, action) means of normalized values
    std::map<std::tuple<prompt::SegmentId, std::size_t, std::string>, PairwiseCell> pairwise;
    std::map<std::pair<prompt::SegmentId, std::string>, PairwiseCell> pairwise_by_action;
};

struct StudyOptions {
    bool with_constraints = true;
    bool fine_grained = false;
    std::optional<std::vector<std::string>> insights;
    std::size_t sample_cap = 200;
    std::uint64_t seed = 1;
    std::size_t max_tokens = 512;
    std::size_t parallelism = 4;
    attr::Space space = attr::Space::Probability;
    attr::Dimension norm = attr::Dimension::PerRow;
};

AttributionStudy run_attribution_study(lm::Gateway& gateway, const std::vector<bw::Instance>& instances,
                                       const StudyOptions& options);

// One record per train instance: the direct prompt and its canonical gold
// plan. Throws SolverFailure naming the first unsolvable instance.
std::vector<nlohmann::json> sft_pairs(const std::vector<bw::Instance>& train, bool with_constraints = true);
void export_sft_pairs(const std::string& path, const std::vector<bw::Instance>& train, bool with_constraints = true);

struct AblationRow {
    std::string label;
    double with_constraints = 0.0;     // accuracy in percent
    double without_constraints = 0.0;
};
// "model,w/,w/o" table with one decimal per cell.
std::string ablation_table(const std::vector<AblationRow>& rows);

struct ReportInputs {
    const ExperimentConfig* config = nullptr;
    const EvalResult* eval = nullptr;
    const EvalResult* ablation = nullptr;  // the opposite constraint condition
    const AttributionStudy* study = nullptr;
    const memory::InsightSet* insights = nullptr;
};

struct ReportBundle {
    fs::path dir;
    std::vector<std::string> files;  // relative, sorted
    std::vector<std::string> omitted;
};

// Writes CSV tables, SVG figures, per-instance matrices and run.json into
// dir. Output bytes depend only on the inputs. Throws IoError.
ReportBundle emit_report(const fs::path& dir, const ReportInputs& inputs);

std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<std::pair<double, double>>& points);
std::string heatmap_svg(const std::string& title, const std::vector<std::string>& row_labels,
                        const std::vector<std::string>& col_labels, const std::vector<std::vector<double>>& values);

struct ExperimentResult {
    memory::InsightSet insights;
    EvalResult eval;
    std::optional<EvalResult> ablation;
    AttributionStudy study;
    ReportBundle bundle;
};

// gen/load -> split -> memory -> eval (+ablation) -> attribute -> report.
// Wall-clock timings go to <out>/timing.json, outside the bundle.
ExperimentResult run_experiment(const ExperimentConfig& config);

// Runs f(i) for i in [0, n) on up to `workers` threads; rethrows the first
// exception after all workers finish.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& f);

void write_file(const fs::path& path, const std::string& bytes);  // throws IoError
std::string read_file(const fs::path& path);                      // throws IoError

}  // namespace planattr::harness
