#include "planattr/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "planattr/prompt.hpp"

namespace planattr::harness {

using nlohmann::json;

void write_file(const fs::path& path, const std::string& bytes) {
    std::error_code ec;
    if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
    out << bytes;
    if (!out) throw Error(ErrorKind::IoError, "write failed for " + path.string());
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::IoError, "cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& f) {
    workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(n, 1));
    std::atomic<std::size_t> next{0};
    std::mutex mutex;
    std::size_t failed_at = n;
    std::exception_ptr failure;
    auto work = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                f(i);
            } catch (...) {
                std::lock_guard lock(mutex);
                // keep the lowest index so the reported error does not depend on scheduling
                if (i < failed_at) {
                    failed_at = i;
                    failure = std::current_exception();
                }
            }
        }
    };
    if (workers == 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    }
    if (failure) std::rethrow_exception(failure);
}

// ---- configuration ----

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    if (!j.is_object()) throw Error(ErrorKind::ConfigError, "config must be a JSON object");
    static const std::set<std::string> known = {
        "dataset", "generate", "train_size", "validation_size", "backend_url", "mock_seed", "parallelism", "cache",
        "memory", "learn_rounds", "insights_path", "threshold", "fine_grained", "with_constraints", "ablation",
        "sample_cap", "seed", "max_tokens", "space", "norm", "out_dir"};
    for (const auto& [key, _] : j.items())
        if (!known.count(key)) throw Error(ErrorKind::ConfigError, "unknown config key '" + key + "'");

    ExperimentConfig c;
    try {
        auto get = [&](const char* key, auto& field) {
            if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
        };
        get("dataset", c.dataset);
        if (j.contains("generate")) {
            const auto& g = j.at("generate");
            for (const auto& [key, _] : g.items())
                if (key != "count" && key != "min_blocks" && key != "max_blocks" && key != "min_optimal" && key != "seed")
                    throw Error(ErrorKind::ConfigError, "unknown generate key '" + key + "'");
            c.generate.count = g.value("count", c.generate.count);
            c.generate.min_blocks = g.value("min_blocks", c.generate.min_blocks);
            c.generate.max_blocks = g.value("max_blocks", c.generate.max_blocks);
            c.generate.min_optimal = g.value("min_optimal", c.generate.min_optimal);
            c.generate.seed = g.value("seed", c.generate.seed);
        }
        get("train_size", c.train_size);
        get("validation_size", c.validation_size);
        get("backend_url", c.backend_url);
        get("mock_seed", c.mock_seed);
        get("parallelism", c.parallelism);
        get("cache", c.cache);
        get("memory", c.memory);
        get("learn_rounds", c.learn_rounds);
        get("insights_path", c.insights_path);
        get("threshold", c.threshold);
        get("fine_grained", c.fine_grained);
        get("with_constraints", c.with_constraints);
        get("ablation", c.ablation);
        get("sample_cap", c.sample_cap);
        get("seed", c.seed);
        get("max_tokens", c.max_tokens);
        get("out_dir", c.out_dir);
        if (j.contains("space")) c.space = attr::space_from_string(j.at("space").get<std::string>());
        if (j.contains("norm")) c.norm = attr::dimension_from_string(j.at("norm").get<std::string>());
    } catch (const json::exception& e) {
        throw Error(ErrorKind::ConfigError, std::string("bad config value: ") + e.what());
    }
    c.check();
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    try {
        return from_json(json::parse(read_file(path)));
    } catch (const json::parse_error& e) {
        throw Error(ErrorKind::ConfigError, path + ": " + e.what());
    }
}

json ExperimentConfig::to_json() const {
    return {{"dataset", dataset},
            {"generate",
             {{"count", generate.count},
              {"min_blocks", generate.min_blocks},
              {"max_blocks", generate.max_blocks},
              {"min_optimal", generate.min_optimal},
              {"seed", generate.seed}}},
            {"train_size", train_size},
            {"validation_size", validation_size},
            {"backend_url", backend_url},
            {"mock_seed", mock_seed},
            {"parallelism", parallelism},
            {"cache", cache},
            {"memory", memory},
            {"learn_rounds", learn_rounds},
            {"insights_path", insights_path},
            {"threshold", threshold},
            {"fine_grained", fine_grained},
            {"with_constraints", with_constraints},
            {"ablation", ablation},
            {"sample_cap", sample_cap},
            {"seed", seed},
            {"max_tokens", max_tokens},
            {"space", attr::to_string(space)},
            {"norm", attr::to_string(norm)},
            {"out_dir", out_dir}};
}

std::string ExperimentConfig::hash() const {
    json j = to_json();
    j.erase("out_dir");
    j.erase("parallelism");
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(lm::fnv1a64(j.dump())));
    return buf;
}

void ExperimentConfig::check() const {
    auto fail = [](const std::string& m) { throw Error(ErrorKind::ConfigError, m); };
    if (sample_cap < 1) fail("sample_cap must be >= 1");
    if (parallelism < 1) fail("parallelism must be >= 1");
    if (max_tokens < 1) fail("max_tokens must be >= 1");
    if (validation_size < 1) fail("validation_size must be >= 1");
    if (generate.min_blocks < 1 || generate.min_blocks > generate.max_blocks) fail("bad generate block range");
    if (memory != "none") memory::learn_mode_from_string(memory);
    if (out_dir.empty()) fail("out_dir must not be empty");
}

std::shared_ptr<lm::Backend> make_backend(const ExperimentConfig& config) {
    if (!config.backend_url.empty()) return std::make_shared<lm::HttpBackend>(config.backend_url);
    lm::PlannerMockConfig mock;
    mock.seed = config.mock_seed;
    return std::make_shared<lm::PlannerMock>(mock);
}

lm::GatewayOptions gateway_options(const ExperimentConfig& config) {
    lm::GatewayOptions o;
    o.parallelism = config.parallelism;
    o.cache = config.cache;
    return o;
}

std::vector<bw::Instance> load_or_generate(const ExperimentConfig& config) {
    if (!config.dataset.empty()) return bw::load_dataset(config.dataset);
    return bw::generate_dataset(config.generate);
}

// ---- splits and sampling ----

namespace {

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::mt19937_64 rng(seed);
    for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
    return idx;
}

}  // namespace

Split split_dataset(const std::vector<bw::Instance>& instances, std::uint64_t seed, std::size_t train_size,
                    std::size_t validation_size) {
    if (instances.size() < train_size + validation_size)
        throw Error(ErrorKind::InsufficientData, "need " + std::to_string(train_size + validation_size) +
                                                     " instances, have " + std::to_string(instances.size()));
    const auto idx = shuffled_indices(instances.size(), seed);
    Split s;
    for (std::size_t k = 0; k < train_size; ++k) s.train.push_back(instances[idx[k]]);
    for (std::size_t k = train_size; k < train_size + validation_size; ++k) s.validation.push_back(instances[idx[k]]);
    return s;
}

std::vector<bw::Instance> sample_instances(const std::vector<bw::Instance>& instances, std::size_t cap,
                                           std::uint64_t seed) {
    if (cap >= instances.size()) return instances;
    auto idx = shuffled_indices(instances.size(), seed ^ 0x5851F42D4C957F2DULL);
    idx.resize(cap);
    std::sort(idx.begin(), idx.end());
    std::vector<bw::Instance> out;
    for (std::size_t i : idx) out.push_back(instances[i]);
    return out;
}

std::size_t step_bin(std::size_t optimal_length) {
    const std::size_t even = optimal_length + optimal_length % 2;
    return std::clamp<std::size_t>(even, 2, kMaxBin);
}

// ---- planning evaluation ----

json EvalRecord::to_json() const {
    return {{"id", id},
            {"optimal_length", optimal_length},
            {"plan_text", plan_text},
            {"correct", correct},
            {"failure_index", failure_index ? json(*failure_index) : json(nullptr)},
            {"violation", violation},
            {"reason", reason}};
}

EvalRecord EvalRecord::from_json(const json& j) {
    EvalRecord r;
    r.id = j.at("id").get<std::string>();
    r.optimal_length = j.at("optimal_length").get<std::size_t>();
    r.plan_text = j.at("plan_text").get<std::string>();
    r.correct = j.at("correct").get<bool>();
    if (!j.at("failure_index").is_null()) r.failure_index = j.at("failure_index").get<std::size_t>();
    r.violation = j.at("violation").get<std::string>();
    r.reason = j.at("reason").get<std::string>();
    return r;
}

EvalResult aggregate_eval(std::string condition, std::vector<EvalRecord> records) {
    EvalResult out;
    out.condition = std::move(condition);
    for (std::size_t b = 2; b <= kMaxBin; b += 2) out.bins[b];
    for (const auto& r : records) {
        auto& bin = out.bins[step_bin(r.optimal_length)];
        ++bin.total;
        ++out.overall.total;
        if (r.correct) {
            ++bin.correct;
            ++out.overall.correct;
        }
    }
    out.records = std::move(records);
    return out;
}

namespace {

prompt::PromptInputs inputs_for(const bw::Instance& inst, bool with_constraints,
                                const std::optional<std::vector<std::string>>& insights) {
    auto in = prompt::blocksworld_inputs(inst, with_constraints);
    in.insights = insights;
    return in;
}

EvalRecord evaluate_one(lm::Gateway& gateway, const bw::Instance& inst, const EvalOptions& options) {
    EvalRecord r;
    r.id = inst.id;
    const auto gold = bw::solve_bfs(inst);
    r.optimal_length = gold ? gold->size() : 0;
    try {
        const auto p = prompt::assemble(inputs_for(inst, options.with_constraints, options.insights), false);
        r.plan_text = gateway.generate(p.rendered(), options.max_tokens);
        const bw::ParsedPlan parsed = options.insights ? memory::parse_inference_response(r.plan_text).plan
                                                       : bw::parse_plan_text(r.plan_text);
        const auto report = bw::validate_plan(inst, parsed.plan);
        r.correct = report.ok;
        r.failure_index = report.failure_index;
        if (report.violation) r.violation = std::string(bw::to_string(*report.violation));
        if (report.failure_index) r.reason = "IllegalAction";
        else if (!report.goal_satisfied) r.reason = "GoalNotSatisfied";
    } catch (const Error& e) {
        r.correct = false;
        r.reason = std::string(to_string(e.kind()));
    }
    return r;
}

}  // namespace

EvalResult run_planning_eval(lm::Gateway& gateway, const std::vector<bw::Instance>& instances,
                             const EvalOptions& options) {
    std::vector<EvalRecord> records(instances.size());
    const std::string condition = options.with_constraints ? "with_constraints" : "without_constraints";
    auto record_path = [&](const bw::Instance& inst) {
        return fs::path(options.records_dir) /
               (options.config_hash + (options.with_constraints ? "-w-" : "-wo-") + inst.id + ".json");
    };
    parallel_for(instances.size(), options.parallelism, [&](std::size_t i) {
        const auto& inst = instances[i];
        if (!options.records_dir.empty()) {
            const auto path = record_path(inst);
            std::error_code ec;
            if (fs::exists(path, ec)) {
                try {
                    records[i] = EvalRecord::from_json(json::parse(read_file(path)));
                    if (records[i].id == inst.id) return;
                } catch (const std::exception&) {
                    // unreadable record: recompute
                }
            }
        }
        records[i] = evaluate_one(gateway, inst, options);
        if (!options.records_dir.empty()) write_file(record_path(inst), records[i].to_json().dump(2) + "\n");
    });
    return aggregate_eval(condition, std::move(records));
}

// ---- attribution study ----

AttributionStudy run_attribution_study(lm::Gateway& gateway, const std::vector<bw::Instance>& instances,
                                       const StudyOptions& options) {
    if (options.sample_cap < 1) throw Error(ErrorKind::ConfigError, "sample cap must be >= 1");
    const auto sample = sample_instances(instances, options.sample_cap, options.seed);

    std::vector<std::optional<InstanceAttribution>> done(sample.size());
    std::vector<std::optional<Error>> errors(sample.size());
    parallel_for(sample.size(), options.parallelism, [&](std::size_t i) {
        const auto& inst = sample[i];
        try {
            const auto p =
                prompt::assemble(inputs_for(inst, options.with_constraints, options.insights), options.fine_grained);
            const std::string text = gateway.generate(p.rendered(), options.max_tokens);
            done[i] = InstanceAttribution{inst.id, text, attr::attribute_blocksworld_plan(gateway, p, text, options.space)};
        } catch (const Error& e) {
            errors[i] = e;
        }
    });

    AttributionStudy study;
    study.norm = options.norm;
    std::vector<prompt::SegmentId> order;
    std::map<prompt::SegmentId, PairwiseCell> component_sums;
    std::map<std::size_t, std::pair<double, std::size_t>> horizon_sums;  // sum of instance means, tokens

    for (std::size_t i = 0; i < sample.size(); ++i) {
        study.sampled.push_back(sample[i].id);
        if (!done[i]) {
            study.failures.push_back({sample[i].id, errors[i]->kind(), errors[i]->what()});
            continue;
        }
        const attr::AttributionMatrix& m = done[i]->result.matrix;

        for (const auto& [id, score] : attr::component_scores(m)) {
            if (!component_sums.count(id)) order.push_back(id);
            auto& cell = component_sums[id];
            cell.sum += score;
            ++cell.count;
        }

        attr::AttributionMatrix normalized = m;
        normalized.values = attr::normalize(m, options.norm).values;

        const auto question = prompt::SegmentId::coarse(prompt::Component::Question);
        if (std::find(m.segment_ids.begin(), m.segment_ids.end(), question) != m.segment_ids.end()) {
            const auto curve = attr::horizon_curve(normalized, question);
            for (const auto& [step, mean] : curve.mean) {
                auto& point = study.horizon[step];
                horizon_sums[step].first += mean;
                point.tokens += curve.tokens.at(step);
                ++point.instances;
            }
        }

        if (std::any_of(m.segment_ids.begin(), m.segment_ids.end(), [](const auto& s) { return s.fine_grained(); })) {
            const auto pw = attr::pairwise_matrix(normalized);
            for (std::size_t r = 0; r < pw.rows.size(); ++r) {
                for (std::size_t c = 0; c < pw.cols.size(); ++c) {
                    auto& cell = study.pairwise[{pw.rows[r], pw.cols[c].step, pw.cols[c].action}];
                    cell.sum += pw.values[r][c];
                    ++cell.count;
                    auto& by_action = study.pairwise_by_action[{pw.rows[r], pw.cols[c].action}];
                    by_action.sum += pw.values[r][c];
                    ++by_action.count;
                }
            }
        }
        study.instances.push_back(std::move(*done[i]));
    }

    for (const auto& id : order) study.components.emplace_back(id, component_sums[id].mean());
    for (auto& [step, point] : study.horizon)
        point.mean = horizon_sums[step].first / static_cast<double>(point.instances);
    return study;
}

// ---- SFT export ----

std::vector<json> sft_pairs(const std::vector<bw::Instance>& train, bool with_constraints) {
    std::vector<json> out;
    for (const auto& inst : train) {
        const auto gold = bw::solve_bfs(inst);
        if (!gold) throw Error(ErrorKind::SolverFailure, "no plan reaches the goal of " + inst.id);
        const auto p = prompt::assemble(prompt::blocksworld_inputs(inst, with_constraints), false);
        out.push_back({{"prompt", p.rendered()}, {"completion", "[Plan]\n" + bw::render_plan(*gold)}});
    }
    return out;
}

void export_sft_pairs(const std::string& path, const std::vector<bw::Instance>& train, bool with_constraints) {
    std::string bytes;
    for (const auto& record : sft_pairs(train, with_constraints)) bytes += record.dump() + "\n";
    write_file(path, bytes);
}

// ---- report ----

namespace {

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    std::string s = buf;
    if (s.find_first_not_of("-0.") == std::string::npos && s[0] == '-') s.erase(0, 1);  // no "-0.00"
    return s;
}

std::string xml_escape(std::string_view s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace

std::string ablation_table(const std::vector<AblationRow>& rows) {
    std::string out = "model,w/,w/o\n";
    for (const auto& r : rows)
        out += r.label + "," + fixed(r.with_constraints, 1) + "," + fixed(r.without_constraints, 1) + "\n";
    return out;
}

std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<std::pair<double, double>>& points) {
    const double W = 480, H = 320, left = 60, right = 20, top = 40, bottom = 50;
    double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (!points.empty()) {
        x0 = x1 = points.front().first;
        y0 = 0.0;
        y1 = 0.0;
        for (const auto& [x, y] : points) {
            x0 = std::min(x0, x);
            x1 = std::max(x1, x);
            y0 = std::min(y0, y);
            y1 = std::max(y1, y);
        }
        if (x1 == x0) x1 = x0 + 1;
        if (y1 == y0) y1 = y0 + 1;
    }
    auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * (W - left - right); };
    auto py = [&](double y) { return H - bottom - (y - y0) / (y1 - y0) * (H - top - bottom); };

    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"320\" font-family=\"sans-serif\" "
                    "font-size=\"11\">\n";
    s += "<rect width=\"480\" height=\"320\" fill=\"white\"/>\n";
    s += "<text x=\"240\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" + xml_escape(title) + "</text>\n";
    s += "<line x1=\"" + fixed(left, 1) + "\" y1=\"" + fixed(H - bottom, 1) + "\" x2=\"" + fixed(W - right, 1) +
         "\" y2=\"" + fixed(H - bottom, 1) + "\" stroke=\"black\"/>\n";
    s += "<line x1=\"" + fixed(left, 1) + "\" y1=\"" + fixed(top, 1) + "\" x2=\"" + fixed(left, 1) + "\" y2=\"" +
         fixed(H - bottom, 1) + "\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double y = y0 + (y1 - y0) * k / 4.0;
        s += "<text x=\"" + fixed(left - 6, 1) + "\" y=\"" + fixed(py(y) + 4, 1) + "\" text-anchor=\"end\">" +
             fixed(y, 2) + "</text>\n";
    }
    for (const auto& [x, y] : points)
        s += "<text x=\"" + fixed(px(x), 1) + "\" y=\"" + fixed(H - bottom + 16, 1) + "\" text-anchor=\"middle\">" +
             fixed(x, 0) + "</text>\n";
    s += "<text x=\"240\" y=\"" + fixed(H - 10, 1) + "\" text-anchor=\"middle\">" + xml_escape(x_label) + "</text>\n";
    s += "<text x=\"14\" y=\"" + fixed(H / 2, 1) + "\" text-anchor=\"middle\" transform=\"rotate(-90 14 " +
         fixed(H / 2, 1) + ")\">" + xml_escape(y_label) + "</text>\n";
    if (!points.empty()) {
        s += "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < points.size(); ++i)
            s += (i ? " " : "") + fixed(px(points[i].first), 1) + "," + fixed(py(points[i].second), 1);
        s += "\"/>\n";
        for (const auto& [x, y] : points)
            s += "<circle cx=\"" + fixed(px(x), 1) + "\" cy=\"" + fixed(py(y), 1) + "\" r=\"3\" fill=\"#1f77b4\"/>\n";
    }
    s += "</svg>\n";
    return s;
}

std::string heatmap_svg(const std::string& title, const std::vector<std::string>& row_labels,
                        const std::vector<std::string>& col_labels, const std::vector<std::vector<double>>& values) {
    const double cell = 28, left = 170, top = 110;
    const double W = left + cell * static_cast<double>(col_labels.size()) + 20;
    const double H = top + cell * static_cast<double>(row_labels.size()) + 20;
    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fixed(W, 0) + "\" height=\"" +
                    fixed(H, 0) + "\" font-family=\"sans-serif\" font-size=\"10\">\n";
    s += "<rect width=\"" + fixed(W, 0) + "\" height=\"" + fixed(H, 0) + "\" fill=\"white\"/>\n";
    s += "<text x=\"10\" y=\"20\" font-size=\"14\">" + xml_escape(title) + "</text>\n";
    for (std::size_t c = 0; c < col_labels.size(); ++c) {
        const double x = left + cell * static_cast<double>(c) + cell / 2;
        s += "<text x=\"" + fixed(x, 1) + "\" y=\"" + fixed(top - 6, 1) + "\" transform=\"rotate(-60 " + fixed(x, 1) +
             " " + fixed(top - 6, 1) + ")\">" + xml_escape(col_labels[c]) + "</text>\n";
    }
    for (std::size_t r = 0; r < row_labels.size(); ++r) {
        const double y = top + cell * static_cast<double>(r);
        s += "<text x=\"" + fixed(left - 6, 1) + "\" y=\"" + fixed(y + cell / 2 + 4, 1) + "\" text-anchor=\"end\">" +
             xml_escape(row_labels[r]) + "</text>\n";
        for (std::size_t c = 0; c < col_labels.size(); ++c) {
            const double v = std::clamp(values[r][c], -1.0, 1.0);
            const int fade = static_cast<int>(std::lround(255.0 * (1.0 - std::abs(v))));
            char color[8];
            if (v >= 0) std::snprintf(color, sizeof color, "#ff%02x%02x", fade, fade);
            else std::snprintf(color, sizeof color, "#%02x%02xff", fade, fade);
            s += "<rect x=\"" + fixed(left + cell * static_cast<double>(c), 1) + "\" y=\"" + fixed(y, 1) +
                 "\" width=\"28\" height=\"28\" fill=\"" + color + "\"><title>" + fixed(values[r][c], 4) +
                 "</title></rect>\n";
        }
    }
    s += "</svg>\n";
    return s;
}

ReportBundle emit_report(const fs::path& dir, const ReportInputs& in) {
    ReportBundle bundle;
    bundle.dir = dir;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorKind::IoError, "cannot create " + dir.string() + ": " + ec.message());

    auto emit = [&](const std::string& rel, const std::string& bytes) {
        write_file(dir / rel, bytes);
        bundle.files.push_back(rel);
    };
    using attr::format_number;

    json manifest;
    if (in.config) {
        json cfg = in.config->to_json();
        cfg.erase("out_dir");
        cfg.erase("parallelism");
        manifest["config"] = cfg;
        manifest["config_hash"] = in.config->hash();
    }

    if (in.eval) {
        std::string csv = "bin,total,correct,accuracy\n";
        std::vector<std::pair<double, double>> points;
        for (const auto& [bin, stats] : in.eval->bins) {
            csv += std::to_string(bin) + "," + std::to_string(stats.total) + "," + std::to_string(stats.correct) + "," +
                   format_number(stats.accuracy()) + "\n";
            points.emplace_back(static_cast<double>(bin), 100.0 * stats.accuracy());
        }
        emit("accuracy_by_steps.csv", csv);
        emit("accuracy_by_steps.svg",
             line_chart_svg("Accuracy by optimal plan length", "optimal plan length (bin)", "accuracy (%)", points));

        std::string records;
        for (const auto& r : in.eval->records) records += r.to_json().dump() + "\n";
        emit("eval_records.jsonl", records);
        manifest["eval"] = {{"condition", in.eval->condition},
                            {"total", in.eval->overall.total},
                            {"correct", in.eval->overall.correct}};
    }
    if (in.eval && in.ablation) {
        const bool main_with = in.eval->condition == "with_constraints";
        const EvalResult& with = main_with ? *in.eval : *in.ablation;
        const EvalResult& without = main_with ? *in.ablation : *in.eval;
        std::string csv = "condition,accuracy\n";
        csv += "w/," + fixed(100.0 * with.overall.accuracy(), 1) + "\n";
        csv += "w/o," + fixed(100.0 * without.overall.accuracy(), 1) + "\n";
        emit("ablation.csv", csv);
    }

    if (in.study) {
        const auto& st = *in.study;
        std::string csv = "segment,label,score\n";
        for (const auto& [id, score] : st.components)
            csv += id.label() + "," + std::string(prompt::to_string(id.component)) + "," + format_number(score) + "\n";
        emit("component_scores.csv", csv);

        std::string horizon = "step,mean_attr,n_tokens,n_instances\n";
        std::vector<std::pair<double, double>> points;
        for (const auto& [step, p] : st.horizon) {
            horizon += std::to_string(step) + "," + format_number(p.mean) + "," + std::to_string(p.tokens) + "," +
                       std::to_string(p.instances) + "\n";
            points.emplace_back(static_cast<double>(step), p.mean);
        }
        emit("horizon_curve.csv", horizon);
        emit("horizon_curve.svg", line_chart_svg("Question attribution by plan step", "plan step",
                                                 "mean normalized attribution", points));

        if (st.pairwise.empty()) {
            bundle.omitted.push_back("pairwise heatmap: no fine-grained segments");
        } else {
            std::string pw = "row_segment,col_action,step,value\n";
            for (const auto& [key, cell] : st.pairwise) {
                const auto& [row, step, action] = key;
                pw += row.label() + "," + action + "," + std::to_string(step) + "," + format_number(cell.mean()) + "\n";
            }
            emit("pairwise.csv", pw);

            std::vector<prompt::SegmentId> rows;
            std::vector<std::string> cols;
            for (const auto& [key, _] : st.pairwise_by_action) {
                if (std::find(rows.begin(), rows.end(), key.first) == rows.end()) rows.push_back(key.first);
                if (std::find(cols.begin(), cols.end(), key.second) == cols.end()) cols.push_back(key.second);
            }
            std::sort(cols.begin(), cols.end());
            std::string by_action = "row_segment,col_action,value\n";
            std::vector<std::vector<double>> grid(rows.size(), std::vector<double>(cols.size(), 0.0));
            std::vector<std::string> row_labels;
            for (std::size_t r = 0; r < rows.size(); ++r) {
                row_labels.push_back(rows[r].label());
                for (std::size_t c = 0; c < cols.size(); ++c) {
                    auto it = st.pairwise_by_action.find({rows[r], cols[c]});
                    if (it == st.pairwise_by_action.end()) continue;
                    grid[r][c] = it->second.mean();
                    by_action += rows[r].label() + "," + cols[c] + "," + format_number(grid[r][c]) + "\n";
                }
            }
            emit("pairwise_by_action.csv", by_action);
            emit("pairwise_by_action.svg", heatmap_svg("Fine-grained attribution by action", row_labels, cols, grid));
        }

        std::string failures = "id,error,reason\n";
        for (const auto& f : st.failures)
            failures += f.id + "," + std::string(to_string(f.kind)) + "," + attr::csv_field(f.reason) + "\n";
        emit("attribution_failures.csv", failures);

        for (const auto& inst : st.instances) {
            emit("matrices/" + inst.id + ".csv", attr::matrix_csv(inst.result.matrix));
            emit("matrices/" + inst.id + ".norm.csv", attr::normalized_csv(inst.result.matrix, st.norm));
        }
        manifest["attribution"] = {{"sampled", st.sampled.size()},
                                   {"attributed", st.instances.size()},
                                   {"failed", st.failures.size()}};
    }

    if (in.insights) emit("insights.json", memory::dump(*in.insights));

    const std::string space = in.config ? std::string(attr::to_string(in.config->space)) : "prob";
    const std::string norm = in.study ? std::string(attr::to_string(in.study->norm))
                                      : in.config ? std::string(attr::to_string(in.config->norm)) : "per-row";
    manifest["space"] = space;
    manifest["normalization"] = {{"component_scores", "whole"}, {"horizon_curve", norm}, {"pairwise", norm},
                                 {"matrices", norm}};
    manifest["aggregation"] = "unweighted mean of per-instance normalized values";
    manifest["word_rollup"] = "mean";
    manifest["step_bins"] = {{"by", "optimal plan length"}, {"edges", {2, 4, 6, 8, 10, 12}},
                             {"rule", "odd lengths round up; lengths above 12 fall in 12"}};
    manifest["omitted"] = bundle.omitted;
    manifest["timestamps"] = "see ../timing.json (kept outside the bundle so bundles stay byte-identical)";

    std::sort(bundle.files.begin(), bundle.files.end());
    manifest["files"] = bundle.files;
    write_file(dir / "run.json", manifest.dump(2) + "\n");
    bundle.files.push_back("run.json");
    std::sort(bundle.files.begin(), bundle.files.end());
    return bundle;
}

// ---- full pipeline ----

namespace {

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config) {
    config.check();
    const auto started = std::chrono::steady_clock::now();
    const std::string started_at = utc_now();
    json timing = json::object();
    auto lap = [&, last = started](const char* phase) mutable {
        const auto now = std::chrono::steady_clock::now();
        timing[phase] = std::chrono::duration<double>(now - last).count();
        last = now;
    };

    const fs::path out = config.out_dir;
    lm::Gateway gateway(make_backend(config), gateway_options(config));

    const auto instances = load_or_generate(config);
    const auto split = split_dataset(instances, config.seed, config.train_size, config.validation_size);
    lap("dataset_seconds");

    ExperimentResult result;
    std::optional<std::vector<std::string>> insights;
    if (config.memory != "none") {
        memory::LearnConfig lc;
        lc.mode = memory::learn_mode_from_string(config.memory);
        lc.rounds = config.learn_rounds;
        lc.max_tokens = config.max_tokens;
        lc.threshold = config.threshold;
        if (!config.insights_path.empty()) lc.reference_path = config.insights_path;
        result.insights = memory::learn_loop(gateway, split.train, lc, {}).set;
        insights = memory::format_for_prompt(memory::visible(result.insights, config.threshold));
    }
    lap("memory_seconds");

    EvalOptions eo;
    eo.with_constraints = config.with_constraints;
    eo.insights = insights;
    eo.max_tokens = config.max_tokens;
    eo.parallelism = config.parallelism;
    eo.records_dir = (out / "records").string();
    eo.config_hash = config.hash();
    result.eval = run_planning_eval(gateway, split.validation, eo);
    if (config.ablation) {
        eo.with_constraints = !config.with_constraints;
        result.ablation = run_planning_eval(gateway, split.validation, eo);
    }
    lap("eval_seconds");

    StudyOptions so;
    so.with_constraints = config.with_constraints;
    so.fine_grained = config.fine_grained;
    so.insights = insights;
    so.sample_cap = config.sample_cap;
    so.seed = config.seed;
    so.max_tokens = config.max_tokens;
    so.parallelism = config.parallelism;
    so.space = config.space;
    so.norm = config.norm;
    result.study = run_attribution_study(gateway, split.validation, so);
    lap("attribution_seconds");

    ReportInputs ri;
    ri.config = &config;
    ri.eval = &result.eval;
    ri.ablation = result.ablation ? &*result.ablation : nullptr;
    ri.study = &result.study;
    ri.insights = config.memory != "none" ? &result.insights : nullptr;
    result.bundle = emit_report(out / "report", ri);
    lap("report_seconds");

    const auto stats = gateway.stats();
    timing["started_at"] = started_at;
    timing["finished_at"] = utc_now();
    timing["total_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    timing["gateway"] = {{"score_requests", stats.score_requests},
                         {"backend_scores", stats.backend_scores},
                         {"cache_hits", stats.cache_hits},
                         {"generate_requests", stats.generate_requests},
                         {"max_in_flight", stats.max_in_flight}};
    write_file(out / "timing.json", timing.dump(2) + "\n");
    return result;
}

}  // namespace planattr::harness
