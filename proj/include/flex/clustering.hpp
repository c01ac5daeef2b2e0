#pragma once

// k-means with k-means++ seeding, the inertia sweep, knee selection by
// maximum distance to chord, and centroid-nearest representative selection.
// Distances are squared Euclidean on raw vectors throughout.

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace flex {

using Point = std::vector<double>;

struct ClusterModel {
  int k = 0;
  std::vector<Point> centroids;
  std::vector<int> assignment;  // point index -> cluster index
  double inertia = 0.0;
  std::uint64_t seed = 0;
  int iterations = 0;
  // Inertia after each assignment step, in iteration order.
  std::vector<double> inertia_trace;
};

struct KMeansOptions {
  int max_iter = 300;
  int restarts = 10;
};

double squared_distance(std::span<const double> a, std::span<const double> b);

double compute_inertia(std::span<const Point> points, std::span<const Point> centroids, std::span<const int> assignment);

// One seeded k-means++ initialisation followed by Lloyd iterations until the
// assignment stops changing or max_iter is reached, then single-point
// transfer passes while any move lowers the inertia.
ClusterModel kmeans(std::span<const Point> points, int k, std::uint64_t seed, int max_iter = 300);

// Lowest-inertia model over `restarts` seeded runs. Ties keep the earliest.
ClusterModel kmeans_best_of(std::span<const Point> points, int k, std::uint64_t seed, const KMeansOptions& options = {});

struct InertiaCurve {
  std::vector<std::pair<int, double>> points;
};

struct SweepResult {
  InertiaCurve curve;
  std::vector<ClusterModel> models;  // aligned with curve.points
};

// Best-of-restarts k-means for every k in [k_min, min(k_max, n)].
SweepResult inertia_sweep(std::span<const Point> points, std::uint64_t seed, const KMeansOptions& options = {},
                          int k_min = 2, int k_max = 20);

// Interior curve point farthest from the chord through the endpoints; ties go
// to the smaller k. Curves with fewer than three points fall back to k = 2.
int select_k(const InertiaCurve& curve);

struct ClusterEntry {
  int index = 0;
  std::size_t size = 0;
  double weight = 0.0;
  // Primary first, then backups, by ascending distance to the centroid.
  std::vector<std::string> candidates;
};

struct ClusterSelection {
  int k_star = 0;
  std::vector<ClusterEntry> clusters;
  std::uint64_t seed = 0;
  InertiaCurve curve;
  std::string strategy = "kmeans";
};

void to_json(nlohmann::json& j, const ClusterSelection& s);
void from_json(const nlohmann::json& j, ClusterSelection& s);

// w_i = |C_i| / sum_j |C_j| over the given sizes.
std::vector<double> size_weights(std::span<const std::size_t> sizes);

// Sets dropped entries to zero and rescales the rest to sum to one.
std::vector<double> renormalize_weights(std::span<const double> weights, std::span<const bool> keep);

ClusterSelection select_representatives(const ClusterModel& model, std::span<const std::string> case_ids,
                                        std::span<const Point> points, int backups = 4);

}  // namespace flex
