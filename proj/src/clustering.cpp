#include "flex/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "flex/errors.hpp"
#include "flex/hashing.hpp"
#include "flex/log.hpp"

namespace flex {

using nlohmann::json;

namespace {

void check_points(std::span<const Point> points) {
  if (points.empty()) throw PreconditionError("k-means needs at least one point");
  const std::size_t d = points.front().size();
  if (d == 0) throw PreconditionError("points must have positive dimension");
  for (const auto& p : points)
    if (p.size() != d) throw PreconditionError("all points must share one dimension");
}

std::vector<Point> kmeanspp_init(std::span<const Point> points, int k, std::mt19937_64& rng) {
  const std::size_t n = points.size();
  std::vector<Point> centroids;
  centroids.reserve(static_cast<std::size_t>(k));
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  centroids.push_back(points[pick(rng)]);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  while (static_cast<int>(centroids.size()) < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], squared_distance(points[i], centroids.back()));
      total += d2[i];
    }
    std::size_t chosen = 0;
    if (total <= 0.0) {
      chosen = pick(rng);
    } else {
      const double target = unit(rng) * total;
      double acc = 0.0;
      chosen = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc > target && d2[i] > 0.0) {
          chosen = i;
          break;
        }
      }
    }
    centroids.push_back(points[chosen]);
  }
  return centroids;
}

int nearest(std::span<const double> p, std::span<const Point> centroids) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double d = squared_distance(p, centroids[c]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

void recompute_means(std::span<const Point> points, const std::vector<int>& assignment, std::vector<Point>& centroids,
                     std::vector<std::size_t>& counts) {
  const std::size_t d = points.front().size();
  for (auto& c : centroids) std::fill(c.begin(), c.end(), 0.0);
  std::fill(counts.begin(), counts.end(), 0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto c = static_cast<std::size_t>(assignment[i]);
    for (std::size_t j = 0; j < d; ++j) centroids[c][j] += points[i][j];
    ++counts[c];
  }
  for (std::size_t c = 0; c < centroids.size(); ++c)
    if (counts[c] > 0)
      for (auto& v : centroids[c]) v /= static_cast<double>(counts[c]);
}

// Hartigan single-point transfers from a Lloyd fixed point: move a point when
// doing so lowers the within-cluster sum of squares. Every partition this
// accepts is also Lloyd-stable, and it escapes many Lloyd local minima.
void transfer_refine(std::span<const Point> points, ClusterModel& model, int max_passes) {
  const std::size_t n = points.size(), d = points.front().size(), k = static_cast<std::size_t>(model.k);
  std::vector<std::size_t> counts(k, 0);
  recompute_means(points, model.assignment, model.centroids, counts);
  if (std::find(counts.begin(), counts.end(), std::size_t{0}) != counts.end()) return;
  for (int pass = 0; pass < max_passes; ++pass) {
    bool moved = false;
    for (std::size_t i = 0; i < n; ++i) {
      const auto a = static_cast<std::size_t>(model.assignment[i]);
      if (counts[a] <= 1) continue;
      const double na = static_cast<double>(counts[a]);
      const double leave = na / (na - 1.0) * squared_distance(points[i], model.centroids[a]);
      std::size_t to = a;
      double best = leave * (1.0 - 1e-12);
      for (std::size_t b = 0; b < k; ++b) {
        if (b == a) continue;
        const double nb = static_cast<double>(counts[b]);
        const double join = nb / (nb + 1.0) * squared_distance(points[i], model.centroids[b]);
        if (join < best) {
          best = join;
          to = b;
        }
      }
      if (to == a) continue;
      const double nb = static_cast<double>(counts[to]);
      for (std::size_t j = 0; j < d; ++j) {
        model.centroids[a][j] = (model.centroids[a][j] * na - points[i][j]) / (na - 1.0);
        model.centroids[to][j] = (model.centroids[to][j] * nb + points[i][j]) / (nb + 1.0);
      }
      --counts[a];
      ++counts[to];
      model.assignment[i] = static_cast<int>(to);
      moved = true;
    }
    recompute_means(points, model.assignment, model.centroids, counts);
    if (!moved) break;
    model.inertia_trace.push_back(compute_inertia(points, model.centroids, model.assignment));
  }
}

}  // namespace

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    s += diff * diff;
  }
  return s;
}

double compute_inertia(std::span<const Point> points, std::span<const Point> centroids, std::span<const int> assignment) {
  double total = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i)
    total += squared_distance(points[i], centroids[static_cast<std::size_t>(assignment[i])]);
  return total;
}

ClusterModel kmeans(std::span<const Point> points, int k, std::uint64_t seed, int max_iter) {
  check_points(points);
  const std::size_t n = points.size();
  if (k < 1) throw PreconditionError("k must be at least 1");
  if (static_cast<std::size_t>(k) > n) throw PreconditionError("k exceeds the number of points");
  const std::size_t d = points.front().size();

  std::mt19937_64 rng(seed);
  ClusterModel model;
  model.k = k;
  model.seed = seed;
  model.centroids = kmeanspp_init(points, k, rng);
  model.assignment.assign(n, -1);

  for (int iter = 0; iter < max_iter; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      const int c = nearest(points[i], model.centroids);
      if (c != model.assignment[i]) {
        model.assignment[i] = c;
        changed = true;
      }
    }
    model.iterations = iter + 1;
    model.inertia_trace.push_back(compute_inertia(points, model.centroids, model.assignment));
    if (!changed) break;

    std::vector<Point> sums(static_cast<std::size_t>(k), Point(d, 0.0));
    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto& s = sums[static_cast<std::size_t>(model.assignment[i])];
      for (std::size_t j = 0; j < d; ++j) s[j] += points[i][j];
      ++counts[static_cast<std::size_t>(model.assignment[i])];
    }
    for (std::size_t c = 0; c < static_cast<std::size_t>(k); ++c) {
      if (counts[c] == 0) continue;
      for (std::size_t j = 0; j < d; ++j) model.centroids[c][j] = sums[c][j] / static_cast<double>(counts[c]);
    }
    // Empty clusters move to the point farthest from its own centroid,
    // skipping points that are the sole member of their cluster.
    for (std::size_t c = 0; c < static_cast<std::size_t>(k); ++c) {
      if (counts[c] != 0) continue;
      std::size_t far = n;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        const auto own = static_cast<std::size_t>(model.assignment[i]);
        if (counts[own] <= 1) continue;
        const double dist = squared_distance(points[i], model.centroids[own]);
        if (dist > far_d) {
          far_d = dist;
          far = i;
        }
      }
      if (far == n) continue;
      --counts[static_cast<std::size_t>(model.assignment[far])];
      model.centroids[c] = points[far];
      model.assignment[far] = static_cast<int>(c);
      counts[c] = 1;
    }
  }
  transfer_refine(points, model, max_iter);
  model.inertia = compute_inertia(points, model.centroids, model.assignment);
  return model;
}

ClusterModel kmeans_best_of(std::span<const Point> points, int k, std::uint64_t seed, const KMeansOptions& options) {
  if (options.restarts < 1) throw PreconditionError("restarts must be at least 1");
  ClusterModel best;
  for (int r = 0; r < options.restarts; ++r) {
    ClusterModel m = kmeans(points, k, mix_seed(seed, static_cast<std::uint64_t>(r)), options.max_iter);
    if (r == 0 || m.inertia < best.inertia) best = std::move(m);
  }
  return best;
}

SweepResult inertia_sweep(std::span<const Point> points, std::uint64_t seed, const KMeansOptions& options, int k_min,
                          int k_max) {
  const int n = static_cast<int>(points.size());
  if (n < 2) throw PreconditionError("inertia sweep needs at least two points");
  if (k_min < 1 || k_max < k_min) throw PreconditionError("invalid k range");
  SweepResult out;
  const int upper = std::min(k_max, n);
  for (int k = k_min; k <= upper; ++k) {
    auto model = kmeans_best_of(points, k, mix_seed(seed, 0x6B00 + static_cast<std::uint64_t>(k)), options);
    out.curve.points.emplace_back(k, model.inertia);
    out.models.push_back(std::move(model));
  }
  return out;
}

int select_k(const InertiaCurve& curve) {
  const auto& pts = curve.points;
  if (pts.size() < 3) {
    log::warn("inertia curve has fewer than 3 points; falling back to k = 2");
    return 2;
  }
  // Both axes are scaled to [0, 1]; perpendicular-distance ranking is
  // invariant under axis scaling, and a unit scale gives a meaningful tie
  // tolerance.
  const double k0 = pts.front().first, k1 = pts.back().first;
  const double i0 = pts.front().second, i1 = pts.back().second;
  const double i_span = std::abs(i0 - i1) > 0.0 ? (i0 - i1) : 1.0;
  auto nx = [&](double k) { return (k - k0) / (k1 - k0); };
  auto ny = [&](double v) { return (v - i1) / i_span; };
  const double ax = 0.0, ay = ny(i0), bx = 1.0, by = 0.0;
  const double len = std::hypot(bx - ax, by - ay);
  int best_k = pts[1].first;
  double best_d = -1.0;
  for (std::size_t i = 1; i + 1 < pts.size(); ++i) {
    const double px = nx(pts[i].first), py = ny(pts[i].second);
    const double dist = std::abs((bx - ax) * (ay - py) - (ax - px) * (by - ay)) / len;
    if (dist > best_d + 1e-12) {
      best_d = dist;
      best_k = pts[i].first;
    }
  }
  return best_k;
}

std::vector<double> size_weights(std::span<const std::size_t> sizes) {
  const double total = static_cast<double>(std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}));
  std::vector<double> w;
  w.reserve(sizes.size());
  for (auto s : sizes) w.push_back(total > 0 ? static_cast<double>(s) / total : 0.0);
  return w;
}

std::vector<double> renormalize_weights(std::span<const double> weights, std::span<const bool> keep) {
  double total = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i)
    if (keep[i]) total += weights[i];
  if (total <= 0.0) throw PreconditionError("no weight remains after renormalization");
  std::vector<double> out(weights.size(), 0.0);
  for (std::size_t i = 0; i < weights.size(); ++i)
    if (keep[i]) out[i] = weights[i] / total;
  return out;
}

ClusterSelection select_representatives(const ClusterModel& model, std::span<const std::string> case_ids,
                                        std::span<const Point> points, int backups) {
  if (case_ids.size() != points.size() || model.assignment.size() != points.size())
    throw PreconditionError("cluster assignment must cover every case");
  ClusterSelection sel;
  sel.k_star = model.k;
  sel.seed = model.seed;
  std::vector<std::size_t> sizes;
  for (int c = 0; c < model.k; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < points.size(); ++i)
      if (model.assignment[i] == c) members.push_back(i);
    if (members.empty()) {
      log::warn("cluster " + std::to_string(c) + " is empty and is excluded from selection");
      continue;
    }
    const auto& centroid = model.centroids[static_cast<std::size_t>(c)];
    std::vector<std::pair<double, std::size_t>> ranked;
    for (auto i : members) ranked.emplace_back(squared_distance(points[i], centroid), i);
    std::sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first < b.first;
      return case_ids[a.second] < case_ids[b.second];
    });
    ClusterEntry entry;
    entry.index = c;
    entry.size = members.size();
    for (std::size_t r = 0; r < ranked.size() && r < static_cast<std::size_t>(1 + backups); ++r)
      entry.candidates.push_back(case_ids[ranked[r].second]);
    sizes.push_back(entry.size);
    sel.clusters.push_back(std::move(entry));
  }
  const auto w = size_weights(sizes);
  for (std::size_t i = 0; i < sel.clusters.size(); ++i) sel.clusters[i].weight = w[i];
  return sel;
}

void to_json(json& j, const ClusterSelection& s) {
  json clusters = json::array();
  for (const auto& c : s.clusters) {
    json backups = json::array();
    for (std::size_t i = 1; i < c.candidates.size(); ++i) backups.push_back(c.candidates[i]);
    clusters.push_back({{"index", c.index},
                        {"size", c.size},
                        {"weight", c.weight},
                        {"representative", c.candidates.empty() ? json(nullptr) : json(c.candidates.front())},
                        {"backups", backups}});
  }
  json curve = json::array();
  for (const auto& [k, inertia] : s.curve.points) curve.push_back(json::array({k, inertia}));
  j = {{"k_star", s.k_star}, {"clusters", clusters}, {"seed", s.seed}, {"inertia_curve", curve}, {"strategy", s.strategy}};
}

void from_json(const json& j, ClusterSelection& s) {
  s = ClusterSelection{};
  s.k_star = j.at("k_star").get<int>();
  s.seed = j.value("seed", std::uint64_t{0});
  s.strategy = j.value("strategy", std::string("kmeans"));
  for (const auto& c : j.at("clusters")) {
    ClusterEntry e;
    e.index = c.at("index").get<int>();
    e.size = c.at("size").get<std::size_t>();
    e.weight = c.at("weight").get<double>();
    if (!c.at("representative").is_null()) e.candidates.push_back(c.at("representative").get<std::string>());
    for (const auto& b : c.value("backups", json::array())) e.candidates.push_back(b.get<std::string>());
    s.clusters.push_back(std::move(e));
  }
  for (const auto& p : j.value("inertia_curve", json::array()))
    s.curve.points.emplace_back(p.at(0).get<int>(), p.at(1).get<double>());
}

}  // namespace flex
