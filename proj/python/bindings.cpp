// Python bindings. Structured values cross the boundary as plain dicts and
// lists (via the json module), instances in their JSONL object form.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "planattr/attribution.hpp"
#include "planattr/blocksworld.hpp"
#include "planattr/harness.hpp"
#include "planattr/memory.hpp"
#include "planattr/prompt.hpp"

namespace py = pybind11;
using namespace planattr;
using nlohmann::json;

namespace {

py::object to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

json from_py(const py::handle& o) {
    return json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

bw::Instance instance(const py::handle& o) {
    auto inst = bw::instance_from_json(from_py(o));
    bw::check_instance(inst);
    return inst;
}

py::dict report_dict(const bw::ValidationReport& r) {
    py::dict d;
    d["ok"] = r.ok;
    d["goal_satisfied"] = r.goal_satisfied;
    d["failure_index"] = r.failure_index ? py::cast(*r.failure_index) : py::none();
    d["violation"] = r.violation ? py::cast(std::string(bw::to_string(*r.violation))) : py::none();
    return d;
}

py::dict matrix_dict(const attr::PlanAttribution& pa, const std::string& plan_text) {
    const auto& m = pa.matrix;
    py::list segments, tokens, steps;
    for (const auto& id : m.segment_ids) segments.append(id.label());
    for (const auto& t : m.tokens) {
        tokens.append(t.text);
        steps.append(t.step);
    }
    py::dict components;
    for (const auto& [id, score] : attr::component_scores(m)) components[py::str(id.label())] = score;
    py::dict d;
    d["plan_text"] = plan_text;
    d["segments"] = segments;
    d["tokens"] = tokens;
    d["steps"] = steps;
    d["step_labels"] = m.step_labels;
    d["values"] = m.values;
    d["components"] = components;
    return d;
}

py::dict attribute(const py::handle& inst_obj, std::optional<std::string> plan_text, bool fine_grained,
                   bool with_constraints, std::optional<std::vector<std::string>> insights, const std::string& space,
                   const std::string& backend_url) {
    const auto inst = instance(inst_obj);
    std::shared_ptr<lm::Backend> backend;
    if (backend_url.empty()) backend = std::make_shared<lm::PlannerMock>();
    else backend = std::make_shared<lm::HttpBackend>(backend_url);
    lm::Gateway gateway(backend);

    auto in = prompt::blocksworld_inputs(inst, with_constraints);
    in.insights = insights;
    const auto p = prompt::assemble(in, fine_grained);
    const auto sp = attr::space_from_string(space);
    std::string text;
    attr::PlanAttribution pa;
    {
        py::gil_scoped_release release;
        text = plan_text ? *plan_text : gateway.generate(p.rendered(), 512);
        pa = attr::attribute_blocksworld_plan(gateway, p, text, sp);
    }
    return matrix_dict(pa, text);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "BlocksWorld planning, prompt attribution, and insight memory";

    // Messages start with the error kind, e.g. "IllegalAction: ...".
    PYBIND11_CONSTINIT static py::gil_safe_call_once_and_store<py::object> error;
    error.call_once_and_store_result([&] { return py::exception<Error>(m, "PlanattrError"); });
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            py::set_error(error.get_stored(), (std::string(to_string(e.kind())) + ": " + e.what()).c_str());
        }
    });

    m.def("generate_instance", [](std::size_t blocks, std::uint64_t seed, std::size_t min_optimal) {
        return to_py(bw::to_json(bw::generate_instance(blocks, seed, min_optimal)));
    }, py::arg("blocks"), py::arg("seed"), py::arg("min_optimal") = 1);

    m.def("generate_dataset", [](std::size_t count, std::size_t min_blocks, std::size_t max_blocks,
                                 std::size_t min_optimal, std::uint64_t seed) {
        py::list out;
        for (const auto& inst : bw::generate_dataset({count, min_blocks, max_blocks, min_optimal, seed}))
            out.append(to_py(bw::to_json(inst)));
        return out;
    }, py::arg("count"), py::arg("min_blocks") = 3, py::arg("max_blocks") = 6, py::arg("min_optimal") = 2,
       py::arg("seed") = 1);

    m.def("solve", [](const py::handle& inst) -> std::optional<std::string> {
        const auto plan = bw::solve_bfs(instance(inst));
        if (!plan) return std::nullopt;
        return bw::render_plan(*plan);
    }, py::arg("instance"), "Optimal plan text, or None when the goal is unreachable.");

    m.def("validate", [](const py::handle& inst, const std::string& plan_text) {
        return report_dict(bw::validate_plan(instance(inst), bw::parse_plan_text(plan_text).plan));
    }, py::arg("instance"), py::arg("plan_text"));

    m.def("parse_plan", [](const std::string& text) {
        py::list out;
        for (const auto& a : bw::parse_plan_text(text).plan) {
            py::list args;
            args.append(a.block);
            if (!a.target.empty()) args.append(a.target);
            out.append(py::make_tuple(std::string(bw::to_string(a.kind)), py::tuple(args)));
        }
        return out;
    }, py::arg("text"));

    m.def("question", [](const py::handle& inst) { return bw::render_instance(instance(inst)).question; },
          py::arg("instance"));

    m.def("render_prompt", [](const py::handle& inst, bool fine_grained, bool with_constraints,
                              std::optional<std::vector<std::string>> insights) {
        auto in = prompt::blocksworld_inputs(instance(inst), with_constraints);
        in.insights = insights;
        const auto p = prompt::assemble(in, fine_grained);
        py::list segments;
        for (const auto& s : p.segments()) segments.append(py::make_tuple(s.id.label(), s.text));
        return py::make_tuple(p.rendered(), segments);
    }, py::arg("instance"), py::arg("fine_grained") = false, py::arg("with_constraints") = true,
       py::arg("insights") = py::none());

    m.def("attribute", &attribute, py::arg("instance"), py::arg("plan_text") = py::none(),
          py::arg("fine_grained") = false, py::arg("with_constraints") = true, py::arg("insights") = py::none(),
          py::arg("space") = "prob", py::arg("backend_url") = "",
          "Attribution matrix of a plan over the prompt segments. Uses the built-in planner mock unless "
          "backend_url is given; plans with the backend when plan_text is None.");

    m.def("normalize", [](const std::vector<std::vector<double>>& values, const std::string& dimension) {
        return attr::normalize(values, attr::dimension_from_string(dimension)).values;
    }, py::arg("values"), py::arg("dimension") = "whole");

    m.def("reference_insights", [] { return to_py(memory::reference_set().to_json()); });

    m.def("apply_insight_actions", [](const py::handle& set, const std::string& response) {
        auto s = memory::InsightSet::from_json(from_py(set));
        for (const auto& a : memory::parse_insight_actions(response).actions) s = memory::apply_action(s, a);
        return to_py(s.to_json());
    }, py::arg("insight_set"), py::arg("response"),
       "Parses '[Add] [Insight n]: ...' lines and applies them in order.");

    m.def("visible_insights", [](const py::handle& set, std::int64_t threshold) {
        std::vector<std::string> out;
        for (const auto& i : memory::visible(memory::InsightSet::from_json(from_py(set)), threshold))
            out.push_back(i.content);
        return out;
    }, py::arg("insight_set"), py::arg("threshold") = memory::kDefaultVisibilityThreshold);

    m.def("run_experiment", [](const py::handle& config) {
        const auto c = harness::ExperimentConfig::from_json(from_py(config));
        harness::ExperimentResult r;
        {
            py::gil_scoped_release release;
            r = harness::run_experiment(c);
        }
        py::dict d;
        d["accuracy"] = r.eval.overall.accuracy();
        d["ablation_accuracy"] = r.ablation ? py::cast(r.ablation->overall.accuracy()) : py::none();
        d["report_dir"] = r.bundle.dir.string();
        d["files"] = r.bundle.files;
        d["omitted"] = r.bundle.omitted;
        py::dict comps;
        for (const auto& [id, score] : r.study.components) comps[py::str(id.label())] = score;
        d["components"] = comps;
        return d;
    }, py::arg("config"), "Runs the full pipeline; config keys match the CLI's JSON config.");
}
