// planattr: command-line entry point for the BlocksWorld attribution toolkit.
//
// Exit codes: 0 success, 1 domain error (one JSON line on stderr), 2 usage.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "planattr/attribution.hpp"
#include "planattr/blocksworld.hpp"
#include "planattr/gateway.hpp"
#include "planattr/harness.hpp"
#include "planattr/memory.hpp"
#include "planattr/prompt.hpp"

using namespace planattr;
using nlohmann::json;

namespace {

// Thrown for domain failures that carry more than an ErrorKind.
struct Diagnostic {
    json body;
};

struct Common {
    std::string config_path;
    std::string backend_url;
    bool mock = false;
    std::uint64_t seed = 1;
    std::string space = "prob";
    bool fine_grained = false;
    std::string norm = "per-row";
    std::int64_t threshold = memory::kDefaultVisibilityThreshold;
    std::size_t parallelism = 4;
    std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config_path, "experiment config (JSON); flags override it");
    cmd->add_option("--backend-url", c.backend_url, "scoring server base URL (else $PLANATTR_BACKEND_URL)");
    cmd->add_flag("--mock", c.mock, "use the in-process planner mock");
    cmd->add_option("--seed", c.seed, "random seed");
    cmd->add_option("--space", c.space, "attribution space")->check(CLI::IsMember({"prob", "logprob"}));
    cmd->add_flag("--fine-grained", c.fine_grained, "split constraints and insights into separate features");
    cmd->add_option("--norm", c.norm, "normalization for heatmaps")->check(CLI::IsMember({"whole", "per-row"}));
    cmd->add_option("--threshold", c.threshold, "insight visibility threshold");
    cmd->add_option("--parallelism", c.parallelism, "maximum in-flight backend calls")->check(CLI::PositiveNumber);
    cmd->add_option("--out", c.out, "output path or directory");
}

bool given(const CLI::App* cmd, const char* flag) { return cmd->count(flag) > 0; }

harness::ExperimentConfig resolve_config(const CLI::App* cmd, const Common& c) {
    harness::ExperimentConfig cfg = c.config_path.empty() ? harness::ExperimentConfig{}
                                                          : harness::ExperimentConfig::load(c.config_path);
    if (given(cmd, "--seed")) cfg.seed = c.seed;
    if (given(cmd, "--space")) cfg.space = attr::space_from_string(c.space);
    if (given(cmd, "--fine-grained")) cfg.fine_grained = true;
    if (given(cmd, "--norm")) cfg.norm = attr::dimension_from_string(c.norm);
    if (given(cmd, "--threshold")) cfg.threshold = c.threshold;
    if (given(cmd, "--parallelism")) cfg.parallelism = c.parallelism;
    if (given(cmd, "--out")) cfg.out_dir = c.out;

    if (c.mock) {
        cfg.backend_url.clear();
    } else if (!c.backend_url.empty()) {
        cfg.backend_url = c.backend_url;
    } else if (cfg.backend_url.empty()) {
        if (const char* env = std::getenv(lm::kBackendUrlEnv); env && *env) cfg.backend_url = env;
    }
    cfg.check();
    return cfg;
}

bw::Instance read_instance(const std::string& path) {
    try {
        return bw::instance_from_json(json::parse(harness::read_file(path)));
    } catch (const json::exception& e) {
        throw Error(ErrorKind::InvalidInstance, path + ": " + e.what());
    }
}

void emit(const std::string& out, const std::string& bytes) {
    if (out.empty()) std::cout << bytes;
    else harness::write_file(out, bytes);
}

std::vector<std::string> prompt_insights(const std::string& path, std::int64_t threshold) {
    return memory::format_for_prompt(memory::visible(memory::load_insights(path), threshold));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Prompt-component attribution for BlocksWorld planning"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "planattr 0.1.0");

    // gen
    auto* gen = app.add_subcommand("gen", "generate a BlocksWorld dataset (JSONL)");
    bw::DatasetOptions gen_opts;
    std::size_t gen_blocks = 0;
    std::string gen_out;
    gen->add_option("--blocks", gen_blocks, "blocks per instance (sets min and max)");
    gen->add_option("--min-blocks", gen_opts.min_blocks);
    gen->add_option("--max-blocks", gen_opts.max_blocks);
    gen->add_option("--count", gen_opts.count)->check(CLI::PositiveNumber);
    gen->add_option("--min-optimal", gen_opts.min_optimal, "minimum optimal plan length");
    gen->add_option("--seed", gen_opts.seed);
    gen->add_option("--out", gen_out, "output file (default stdout)");

    // solve
    auto* solve = app.add_subcommand("solve", "print the optimal plan of an instance");
    std::string solve_instance, solve_dataset, solve_out;
    auto* solve_inst_opt = solve->add_option("--instance", solve_instance, "instance JSON file");
    solve->add_option("--dataset", solve_dataset, "dataset JSONL file")->excludes(solve_inst_opt);
    solve->add_option("--out", solve_out);

    // validate
    auto* validate = app.add_subcommand("validate", "check a plan against an instance");
    std::string val_instance, val_plan;
    validate->add_option("--instance", val_instance)->required();
    validate->add_option("--plan", val_plan, "plan text file")->required();

    // plan
    auto* plan = app.add_subcommand("plan", "ask the backend for a plan");
    Common plan_c;
    std::string plan_instance, plan_insights;
    bool plan_no_constraints = false;
    std::size_t plan_max_tokens = 512;
    add_common(plan, plan_c);
    plan->add_option("--instance", plan_instance)->required();
    plan->add_option("--insights", plan_insights, "insight set JSON for the memory prompt");
    plan->add_flag("--no-constraints", plan_no_constraints);
    plan->add_option("--max-tokens", plan_max_tokens)->check(CLI::PositiveNumber);

    // attribute
    auto* attribute = app.add_subcommand("attribute", "attribution for one instance, or a study with --config");
    Common attr_c;
    std::string attr_instance, attr_plan, attr_insights;
    bool attr_no_constraints = false;
    add_common(attribute, attr_c);
    attribute->add_option("--instance", attr_instance, "single instance JSON");
    attribute->add_option("--plan", attr_plan, "plan text to attribute (default: the model's own)");
    attribute->add_option("--insights", attr_insights);
    attribute->add_flag("--no-constraints", attr_no_constraints);

    // learn
    auto* learn = app.add_subcommand("learn", "build an insight set");
    Common learn_c;
    std::string learn_dataset, learn_mode = "bc", learn_reference;
    std::size_t learn_rounds = 1;
    add_common(learn, learn_c);
    learn->add_option("--dataset", learn_dataset, "training instances (default: config train split)");
    learn->add_option("--mode", learn_mode)->check(CLI::IsMember({"bc", "of", "reference"}));
    learn->add_option("--rounds", learn_rounds)->check(CLI::PositiveNumber);
    learn->add_option("--reference", learn_reference, "reference insight file");

    // eval
    auto* eval = app.add_subcommand("eval", "planning accuracy by horizon, with the constraint ablation");
    Common eval_c;
    add_common(eval, eval_c);

    // export-sft
    auto* sft = app.add_subcommand("export-sft", "write (prompt, gold plan) pairs for fine-tuning");
    Common sft_c;
    std::string sft_dataset;
    add_common(sft, sft_c);
    sft->add_option("--dataset", sft_dataset, "instances to export (default: config train split)");

    // report
    auto* report = app.add_subcommand("report", "full pipeline: split, memory, eval, attribution, report");
    Common report_c;
    add_common(report, report_c);

    // serve-mock
    auto* serve = app.add_subcommand("serve-mock", "serve the planner mock over the wire protocol");
    std::string serve_host = "127.0.0.1";
    int serve_port = 8080;
    std::uint64_t serve_seed = 0;
    serve->add_option("--host", serve_host);
    serve->add_option("--port", serve_port)->check(CLI::Range(0, 65535));
    serve->add_option("--seed", serve_seed);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) {
            if (gen_blocks) gen_opts.min_blocks = gen_opts.max_blocks = gen_blocks;
            if (gen_opts.min_blocks > gen_opts.max_blocks) gen_opts.max_blocks = gen_opts.min_blocks;
            std::string bytes;
            for (const auto& inst : bw::generate_dataset(gen_opts)) bytes += bw::to_json(inst).dump() + "\n";
            emit(gen_out, bytes);
        } else if (solve->parsed()) {
            if (solve_instance.empty() == solve_dataset.empty())
                throw CLI::ValidationError("solve", "give exactly one of --instance or --dataset");
            if (!solve_instance.empty()) {
                const auto inst = read_instance(solve_instance);
                const auto p = bw::solve_bfs(inst);
                if (!p) throw Error(ErrorKind::SolverFailure, "goal unreachable for " + inst.id);
                emit(solve_out, bw::render_plan(*p));
            } else {
                std::string bytes;
                for (const auto& inst : bw::load_dataset(solve_dataset)) {
                    const auto p = bw::solve_bfs(inst);
                    if (!p) throw Error(ErrorKind::SolverFailure, "goal unreachable for " + inst.id);
                    bytes += json{{"id", inst.id}, {"length", p->size()}, {"plan", bw::render_plan(*p)}}.dump() + "\n";
                }
                emit(solve_out, bytes);
            }
        } else if (validate->parsed()) {
            const auto inst = read_instance(val_instance);
            const auto parsed = bw::parse_plan_text(harness::read_file(val_plan));
            const auto r = bw::validate_plan(inst, parsed.plan);
            json body{{"ok", r.ok},
                      {"goal_satisfied", r.goal_satisfied},
                      {"steps", parsed.plan.size()},
                      {"failure_index", r.failure_index ? json(*r.failure_index) : json(nullptr)},
                      {"violation", r.violation ? json(bw::to_string(*r.violation)) : json(nullptr)}};
            std::cout << body.dump() << "\n";
            if (!r.ok) {
                body["error"] = r.failure_index ? "IllegalAction" : "GoalNotSatisfied";
                throw Diagnostic{body};
            }
        } else if (plan->parsed()) {
            const auto cfg = resolve_config(plan, plan_c);
            lm::Gateway gateway(harness::make_backend(cfg), harness::gateway_options(cfg));
            auto inputs = prompt::blocksworld_inputs(read_instance(plan_instance), !plan_no_constraints);
            if (!plan_insights.empty())
                inputs.insights = prompt_insights(plan_insights, cfg.threshold);
            emit(plan_c.out, gateway.generate(prompt::assemble(inputs, false).rendered(), plan_max_tokens));
        } else if (attribute->parsed()) {
            const auto cfg = resolve_config(attribute, attr_c);
            lm::Gateway gateway(harness::make_backend(cfg), harness::gateway_options(cfg));
            if (!attr_instance.empty()) {
                auto inputs = prompt::blocksworld_inputs(read_instance(attr_instance), !attr_no_constraints);
                if (!attr_insights.empty())
                    inputs.insights = prompt_insights(attr_insights, cfg.threshold);
                const auto p = prompt::assemble(inputs, cfg.fine_grained);
                const std::string text = attr_plan.empty() ? gateway.generate(p.rendered(), cfg.max_tokens)
                                                           : harness::read_file(attr_plan);
                const auto result = attr::attribute_blocksworld_plan(gateway, p, text, cfg.space);
                if (attr_c.out.empty()) {
                    std::cout << attr::matrix_csv(result.matrix);
                } else {
                    const harness::fs::path dir = attr_c.out;
                    harness::write_file(dir / "matrix.csv", attr::matrix_csv(result.matrix));
                    harness::write_file(dir / "matrix.norm.csv", attr::normalized_csv(result.matrix, cfg.norm));
                    std::string comp = "segment,label,score\n";
                    for (const auto& [id, score] : attr::component_scores(result.matrix))
                        comp += id.label() + "," + std::string(prompt::to_string(id.component)) + "," +
                                attr::format_number(score) + "\n";
                    harness::write_file(dir / "component_scores.csv", comp);
                }
            } else {
                if (attr_c.config_path.empty())
                    throw CLI::ValidationError("attribute", "give --instance or --config");
                const auto split = harness::split_dataset(harness::load_or_generate(cfg), cfg.seed, cfg.train_size,
                                                          cfg.validation_size);
                harness::StudyOptions so;
                so.with_constraints = cfg.with_constraints;
                so.fine_grained = cfg.fine_grained;
                so.sample_cap = cfg.sample_cap;
                so.seed = cfg.seed;
                so.max_tokens = cfg.max_tokens;
                so.parallelism = cfg.parallelism;
                so.space = cfg.space;
                so.norm = cfg.norm;
                if (!attr_insights.empty())
                    so.insights = prompt_insights(attr_insights, cfg.threshold);
                // Fail fast on an unusable backend instead of recording every instance as failed.
                const auto first = harness::sample_instances(split.validation, 1, cfg.seed);
                auto probe = prompt::blocksworld_inputs(first.front(), so.with_constraints);
                probe.insights = so.insights;
                gateway.generate(prompt::assemble(probe, so.fine_grained).rendered(), so.max_tokens);

                const auto study = harness::run_attribution_study(gateway, split.validation, so);
                if (study.instances.empty() && !study.failures.empty())
                    throw Error(study.failures.front().kind, study.failures.front().reason);
                harness::ReportInputs ri;
                ri.config = &cfg;
                ri.study = &study;
                harness::emit_report(harness::fs::path(cfg.out_dir) / "report", ri);
            }
        } else if (learn->parsed()) {
            const auto cfg = resolve_config(learn, learn_c);
            lm::Gateway gateway(harness::make_backend(cfg), harness::gateway_options(cfg));
            std::vector<bw::Instance> train;
            if (!learn_dataset.empty()) {
                train = bw::load_dataset(learn_dataset);
            } else if (learn_mode != "reference") {
                train = harness::split_dataset(harness::load_or_generate(cfg), cfg.seed, cfg.train_size,
                                               cfg.validation_size).train;
            }
            memory::LearnConfig lc;
            lc.mode = memory::learn_mode_from_string(learn_mode);
            lc.rounds = learn_rounds;
            lc.max_tokens = cfg.max_tokens;
            lc.threshold = cfg.threshold;
            if (!learn_reference.empty()) lc.reference_path = learn_reference;
            const auto result = memory::learn_loop(gateway, train, lc, {});
            emit(learn_c.out, memory::dump(result.set));
        } else if (eval->parsed()) {
            const auto cfg = resolve_config(eval, eval_c);
            lm::Gateway gateway(harness::make_backend(cfg), harness::gateway_options(cfg));
            const auto split = harness::split_dataset(harness::load_or_generate(cfg), cfg.seed, cfg.train_size,
                                                      cfg.validation_size);
            harness::EvalOptions eo;
            eo.with_constraints = cfg.with_constraints;
            eo.max_tokens = cfg.max_tokens;
            eo.parallelism = cfg.parallelism;
            eo.records_dir = (harness::fs::path(cfg.out_dir) / "records").string();
            eo.config_hash = cfg.hash();
            const auto main_run = harness::run_planning_eval(gateway, split.validation, eo);
            std::optional<harness::EvalResult> other;
            if (cfg.ablation) {
                eo.with_constraints = !cfg.with_constraints;
                other = harness::run_planning_eval(gateway, split.validation, eo);
            }
            harness::ReportInputs ri;
            ri.config = &cfg;
            ri.eval = &main_run;
            ri.ablation = other ? &*other : nullptr;
            harness::emit_report(harness::fs::path(cfg.out_dir) / "report", ri);
            std::cout << json{{"condition", main_run.condition},
                              {"total", main_run.overall.total},
                              {"correct", main_run.overall.correct}}
                             .dump()
                      << "\n";
        } else if (sft->parsed()) {
            const auto cfg = resolve_config(sft, sft_c);
            const auto train = !sft_dataset.empty()
                                   ? bw::load_dataset(sft_dataset)
                                   : harness::split_dataset(harness::load_or_generate(cfg), cfg.seed, cfg.train_size,
                                                            cfg.validation_size)
                                         .train;
            if (sft_c.out.empty()) {
                for (const auto& r : harness::sft_pairs(train, cfg.with_constraints)) std::cout << r.dump() << "\n";
            } else {
                harness::export_sft_pairs(sft_c.out, train, cfg.with_constraints);
            }
        } else if (report->parsed()) {
            const auto cfg = resolve_config(report, report_c);
            const auto result = harness::run_experiment(cfg);
            std::cout << json{{"report", result.bundle.dir.string()}, {"files", result.bundle.files.size()},
                              {"accuracy", result.eval.overall.accuracy()}}
                             .dump()
                      << "\n";
        } else if (serve->parsed()) {
            lm::PlannerMockConfig mc;
            mc.seed = serve_seed;
            lm::WireServer server(std::make_shared<lm::PlannerMock>(mc));
            std::cerr << "serving planner mock on " << serve_host << ":" << serve_port << "\n";
            server.run(serve_host, serve_port);
        }
    } catch (const CLI::Error& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const Diagnostic& d) {
        std::cerr << d.body.dump() << "\n";
        return 1;
    } catch (const bw::IllegalAction& e) {
        std::cerr << json{{"error", "IllegalAction"}, {"violation", bw::to_string(e.violation())}, {"message", e.what()}}
                         .dump()
                  << "\n";
        return 1;
    } catch (const Error& e) {
        std::cerr << json{{"error", to_string(e.kind())}, {"message", e.what()}}.dump() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << json{{"error", "Internal"}, {"message", e.what()}}.dump() << "\n";
        return 1;
    }
    return 0;
}
