#include "flex/error_mining.hpp"

#include <algorithm>
#include <map>
#include <random>

#include "flex/errors.hpp"
#include "flex/parallel.hpp"

namespace flex {

using nlohmann::json;

void to_json(json& j, const ErrorCase& e) {
  j = json(e.instance);
  j.erase("id");
  j.erase("input");
  j.erase("gold");
  j["instance_id"] = e.id();
  j["x"] = e.x();
  j["r"] = e.r();
  j["y"] = e.y();
}

void from_json(const json& j, ErrorCase& e) {
  json inst = j;
  inst["id"] = j.at("instance_id");
  inst["input"] = j.at("x");
  inst["gold"] = j.at("y");
  e = ErrorCase{};
  e.instance = inst.get<TaskInstance>();
  e.response = j.at("r").get<std::string>();
}

std::string join_segments(std::initializer_list<std::string_view> segments) {
  std::string out;
  for (auto s : segments) {
    if (s.empty()) continue;
    if (!out.empty()) out.push_back('\n');
    out.append(s);
  }
  return out;
}

TrainRun run_train_cot(std::span<const TaskInstance> train, Gateway& model, int parallelism) {
  for (const auto& t : train)
    if (t.split != Split::train) throw PreconditionError("instance " + t.id + " is not in the train split");
  TrainRun run;
  run.instances.assign(train.begin(), train.end());
  run.responses.resize(train.size());
  run.verdicts.resize(train.size());
  parallel_for(train.size(), parallelism, [&](std::size_t i) {
    const auto prompt = build_prompt(train[i]);
    try {
      run.responses[i] = model.generate(greedy_request(prompt.system, prompt.user)).samples.front();
    } catch (const Error& e) {
      throw Error("instance " + train[i].id + ": " + e.what());
    }
    run.verdicts[i] = score(run.responses[i], train[i]);
  });
  return run;
}

std::vector<ErrorCase> errors_from_run(const TrainRun& run) {
  std::vector<ErrorCase> out;
  for (std::size_t i = 0; i < run.instances.size(); ++i)
    if (!run.verdicts[i].correct) out.push_back({run.instances[i], run.responses[i], std::nullopt});
  return out;
}

std::vector<ErrorCase> collect_errors(std::span<const TaskInstance> train, Gateway& model, int parallelism) {
  return errors_from_run(run_train_cot(train, model, parallelism));
}

void embed_errors(std::vector<ErrorCase>& cases, Gateway& model, int parallelism) {
  parallel_for(cases.size(), parallelism, [&](std::size_t i) {
    cases[i].embedding = model.embed_sequence(join_segments({cases[i].x(), cases[i].r()}));
  });
}

MiningResult cluster_errors(std::span<const ErrorCase> cases, const MiningOptions& options) {
  std::vector<Point> points;
  std::vector<std::string> ids;
  for (const auto& c : cases) {
    if (!c.embedding) throw PreconditionError("case " + c.id() + " has no embedding");
    points.push_back(c.embedding->values);
    ids.push_back(c.id());
  }
  MiningResult out;
  if (points.size() < 2) {
    // A single error is its own cluster.
    if (points.empty()) throw PreconditionError("nothing to cluster");
    out.model = kmeans(points, 1, options.seed, options.kmeans.max_iter);
    out.selection = select_representatives(out.model, ids, points, options.backups);
    out.selection.seed = options.seed;
    return out;
  }
  auto sweep = inertia_sweep(points, options.seed, options.kmeans, options.k_min, options.k_max);
  const int k_star = select_k(sweep.curve);
  const auto it = std::find_if(sweep.curve.points.begin(), sweep.curve.points.end(),
                               [&](const auto& p) { return p.first == k_star; });
  if (it == sweep.curve.points.end()) throw FatalError("selected k is not on the inertia curve");
  out.model = sweep.models[static_cast<std::size_t>(it - sweep.curve.points.begin())];
  out.selection = select_representatives(out.model, ids, points, options.backups);
  out.selection.seed = options.seed;
  out.selection.curve = sweep.curve;
  return out;
}

ClusterSelection random_selection(std::span<const ErrorCase> cases, int k, std::uint64_t seed) {
  if (k < 1 || static_cast<std::size_t>(k) > cases.size()) throw PreconditionError("random selection needs 1 <= k <= |E|");
  std::vector<std::size_t> order(cases.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  ClusterSelection sel;
  sel.k_star = k;
  sel.seed = seed;
  sel.strategy = "random";
  for (int c = 0; c < k; ++c)
    sel.clusters.push_back({c, 1, 1.0 / k, {cases[order[static_cast<std::size_t>(c)]].id()}});
  return sel;
}

ClusterSelection task_type_selection(std::span<const ErrorCase> cases, std::uint64_t seed) {
  std::map<std::string, std::vector<std::size_t>> by_type;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto& inst = cases[i].instance;
    by_type[inst.constraint ? to_string(inst.constraint->kind) : to_string(inst.kind)].push_back(i);
  }
  if (by_type.empty()) throw PreconditionError("nothing to select");
  std::mt19937_64 rng(seed);
  ClusterSelection sel;
  sel.seed = seed;
  sel.strategy = "task_type";
  int index = 0;
  for (const auto& [type, members] : by_type) {
    std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
    sel.clusters.push_back({index++, 1, 0.0, {cases[members[pick(rng)]].id()}});
  }
  sel.k_star = index;
  for (auto& c : sel.clusters) c.weight = 1.0 / index;
  return sel;
}

}  // namespace flex
