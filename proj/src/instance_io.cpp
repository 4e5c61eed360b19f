#include <fstream>
#include <sstream>

#include "planattr/blocksworld.hpp"

namespace planattr::bw {

void check_instance(const Instance& inst) {
    auto fail = [&](const std::string& why) {
        return Error(ErrorKind::InvalidInstance, "instance '" + inst.id + "': " + why);
    };
    const WorldState& s = inst.initial;
    std::set<Block> declared(inst.blocks.begin(), inst.blocks.end());
    if (declared.size() != inst.blocks.size()) throw fail("duplicate block names");
    for (const auto& b : inst.blocks)
        if (b.empty()) throw fail("empty block name");

    std::map<Block, int> placements;
    for (const auto& [b, below] : s.on) {
        ++placements[b];
        if (b == below) throw fail("block '" + b + "' sits on itself");
        if (!declared.count(below)) throw fail("unknown support '" + below + "'");
    }
    for (const auto& b : s.on_table) ++placements[b];
    if (s.holding) ++placements[*s.holding];
    for (const auto& b : inst.blocks)
        if (placements[b] != 1) throw fail("block '" + b + "' must be placed exactly once");
    if (placements.size() != declared.size()) throw fail("state references undeclared blocks");

    // Two blocks cannot share a support and the support relation is acyclic.
    std::set<Block> supports;
    for (const auto& [b, below] : s.on) {
        if (!supports.insert(below).second) throw fail("two blocks on '" + below + "'");
        if (s.holding == below) throw fail("block stacked on the held block");
        Block cur = b;
        for (std::size_t steps = 0; s.on.count(cur); ++steps) {
            if (steps > s.on.size()) throw fail("cyclic support relation");
            cur = s.on.at(cur);
        }
    }
    for (const auto& g : inst.goal) {
        if (!declared.count(g.block)) throw fail("goal references unknown block '" + g.block + "'");
        if (g.type == GoalAtom::Type::On && !declared.count(g.below))
            throw fail("goal references unknown block '" + g.below + "'");
    }
}

nlohmann::json to_json(const Instance& inst) {
    nlohmann::json on = nlohmann::json::object();
    for (const auto& [b, below] : inst.initial.on) on[b] = below;
    nlohmann::json goal = nlohmann::json::array();
    for (const auto& g : inst.goal) {
        if (g.type == GoalAtom::Type::On)
            goal.push_back({{"type", "on"}, {"a", g.block}, {"b", g.below}});
        else
            goal.push_back({{"type", "on_table"}, {"a", g.block}});
    }
    return {
        {"id", inst.id},
        {"blocks", inst.blocks},
        {"initial",
         {{"on", on},
          {"on_table", std::vector<Block>(inst.initial.on_table.begin(), inst.initial.on_table.end())},
          {"holding", inst.initial.holding ? nlohmann::json(*inst.initial.holding) : nlohmann::json(nullptr)}}},
        {"goal", goal},
    };
}

Instance instance_from_json(const nlohmann::json& j) {
    Instance inst;
    try {
        inst.id = j.at("id").get<std::string>();
        inst.blocks = j.at("blocks").get<std::vector<Block>>();
        const auto& init = j.at("initial");
        for (const auto& [b, below] : init.at("on").items()) inst.initial.on[b] = below.get<std::string>();
        for (const auto& b : init.at("on_table")) inst.initial.on_table.insert(b.get<std::string>());
        if (init.contains("holding") && !init.at("holding").is_null())
            inst.initial.holding = init.at("holding").get<std::string>();
        for (const auto& g : j.at("goal")) {
            const auto type = g.at("type").get<std::string>();
            if (type == "on")
                inst.goal.push_back({GoalAtom::Type::On, g.at("a").get<std::string>(), g.at("b").get<std::string>()});
            else if (type == "on_table")
                inst.goal.push_back({GoalAtom::Type::OnTable, g.at("a").get<std::string>(), {}});
            else
                throw Error(ErrorKind::InvalidInstance, "unknown goal type '" + type + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::InvalidInstance, std::string("malformed instance JSON: ") + e.what());
    }
    check_instance(inst);
    return inst;
}

std::vector<Instance> load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot open dataset '" + path + "'");
    std::vector<Instance> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw Error(ErrorKind::InvalidInstance, "dataset '" + path + "': " + e.what());
        }
        out.push_back(instance_from_json(j));
    }
    return out;
}

void save_dataset(const std::string& path, const std::vector<Instance>& instances) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::IoError, "cannot write dataset '" + path + "'");
    for (const auto& inst : instances) out << to_json(inst).dump() << '\n';
    if (!out) throw Error(ErrorKind::IoError, "write failed for '" + path + "'");
}

}  // namespace planattr::bw
