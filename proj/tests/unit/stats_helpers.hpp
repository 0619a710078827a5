#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

namespace testing_helpers {

struct Moments {
  double mean = 0.0;
  double var = 0.0;
  double se = 0.0;  // standard error of the mean
};

template <class T>
Moments moments(const std::vector<T>& v) {
  Moments m;
  const double n = static_cast<double>(v.size());
  for (auto x : v) m.mean += static_cast<double>(x);
  m.mean /= n;
  for (auto x : v) m.var += (static_cast<double>(x) - m.mean) * (static_cast<double>(x) - m.mean);
  m.var /= n - 1.0;
  m.se = std::sqrt(m.var / n);
  return m;
}

// Two-sample chi-square statistic on pooled integer bins with at least `min_count`
// expected entries; returns (statistic, degrees of freedom).
inline std::pair<double, int> chi_square_two_sample(const std::vector<std::int64_t>& a,
                                                    const std::vector<std::int64_t>& b, double min_count = 20) {
  std::map<std::int64_t, std::pair<double, double>> bins;
  for (auto x : a) bins[x].first += 1;
  for (auto x : b) bins[x].second += 1;
  std::vector<std::pair<double, double>> merged;
  std::pair<double, double> acc{0, 0};
  for (const auto& [k, c] : bins) {
    acc.first += c.first;
    acc.second += c.second;
    if (acc.first + acc.second >= 2 * min_count) {
      merged.push_back(acc);
      acc = {0, 0};
    }
  }
  if (acc.first + acc.second > 0) {
    if (merged.empty()) merged.push_back(acc);
    else {
      merged.back().first += acc.first;
      merged.back().second += acc.second;
    }
  }
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  double stat = 0.0;
  for (const auto& [ca, cb] : merged) {
    const double tot = ca + cb;
    const double ea = tot * na / (na + nb), eb = tot * nb / (na + nb);
    stat += (ca - ea) * (ca - ea) / ea + (cb - eb) * (cb - eb) / eb;
  }
  return {stat, static_cast<int>(merged.size()) - 1};
}

// Upper 1 % point of chi-square via the Wilson-Hilferty approximation.
inline double chi_square_crit_1pct(int dof) {
  const double k = dof, z = 2.3263478740408408;
  const double t = 1.0 - 2.0 / (9.0 * k) + z * std::sqrt(2.0 / (9.0 * k));
  return k * t * t * t;
}

}  // namespace testing_helpers
