#include "latnav/anonymize.hpp"

#include <algorithm>
#include <cstdio>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>

#include "latnav/kernels.hpp"
#include "latnav/random.hpp"

namespace latnav {

AnonymizedSet ksame_centroids(std::span<const ProjectedLatent> projected, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("ksame_centroids: k must be at least 2, got " + std::to_string(k));
  if (projected.empty()) throw std::invalid_argument("ksame_centroids: no latents");
  const std::size_t d = projected.front().latent.dim();
  std::set<int> identities;
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < projected.size(); ++i) {
    const auto& p = projected[i];
    if (p.latent.dim() != d) throw std::invalid_argument("ksame_centroids: latent dimensions differ");
    if (!identities.insert(p.identity).second) {
      throw std::invalid_argument("ksame_centroids: identity " + std::to_string(p.identity) + " appears twice");
    }
    by_class[p.label].push_back(i);
  }
  for (const auto& [label, members] : by_class) {
    if (members.size() < k) {
      throw std::invalid_argument("ksame_centroids: class " + std::to_string(label) + " has " +
                                  std::to_string(members.size()) + " members, fewer than k=" + std::to_string(k));
    }
  }

  AnonymizedSet out;
  out.k = k;
  out.seed = seed;
  for (const auto& [label, members] : by_class) {
    std::vector<std::size_t> remaining = members;
    Rng rng(mix_seed(seed, 0x6b, static_cast<std::uint64_t>(label)));
    std::size_t current = remaining[static_cast<std::size_t>(rng() % remaining.size())];
    const std::size_t groups = members.size() / k;
    for (std::size_t g = 0; g < groups; ++g) {
      Centroid c;
      c.label = label;
      c.latent.values.assign(d, 0.0);
      for (std::size_t m = 0; m < k; ++m) {
        if (g > 0 || m > 0) {
          // Nearest remaining member to the last one placed; ties keep input order.
          const auto& last = projected[current].latent.values;
          double best = std::numeric_limits<double>::infinity();
          for (std::size_t cand : remaining) {
            const double dist = kernels::squared_distance(last, projected[cand].latent.values);
            if (dist < best) {
              best = dist;
              current = cand;
            }
          }
        }
        remaining.erase(std::find(remaining.begin(), remaining.end(), current));
        c.members.push_back(projected[current].identity);
        const auto& w = projected[current].latent.values;
        for (std::size_t j = 0; j < d; ++j) c.latent.values[j] += w[j];
      }
      for (double& v : c.latent.values) v /= static_cast<double>(k);
      out.centroids.push_back(std::move(c));
    }
  }
  return out;
}

PairSampling sample_pairs(const AnonymizedSet& set, std::uint64_t seed) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < set.centroids.size(); ++i) by_class[set.centroids[i].label].push_back(i);
  PairSampling out;
  for (auto& [label, members] : by_class) {
    if (members.size() < 2) {
      out.skipped_classes.push_back(label);
      continue;
    }
    Rng rng(mix_seed(seed, 0x9a, static_cast<std::uint64_t>(label)));
    seeded_shuffle(members, rng);
    for (std::size_t i = 0; i + 1 < members.size(); i += 2) {
      out.pairs.push_back({set.centroids[members[i]].latent, set.centroids[members[i + 1]].latent, label, members[i],
                           members[i + 1]});
    }
  }
  return out;
}

void write_anonymized(std::ostream& out, const AnonymizedSet& set, bool include_members) {
  const std::size_t d = set.centroids.empty() ? 0 : set.centroids.front().latent.dim();
  out << "latnav-centroids 1\n"
      << "k " << set.k << "\n"
      << "seed " << set.seed << "\n"
      << "count " << set.centroids.size() << "\n"
      << "d " << d << "\n";
  char buf[32];
  for (const auto& c : set.centroids) {
    out << "centroid " << c.label;
    for (double v : c.latent.values) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << ' ' << buf;
    }
    out << '\n';
    if (include_members) {
      out << "members";
      for (int m : c.members) out << ' ' << m;
      out << '\n';
    }
  }
}

AnonymizedSet read_anonymized(std::istream& in) {
  auto fail = [](const std::string& what) { throw std::runtime_error("read_anonymized: " + what); };
  std::string line;
  if (!std::getline(in, line) || line != "latnav-centroids 1") fail("bad magic line");
  AnonymizedSet set;
  std::size_t count = 0, d = 0;
  std::string key;
  if (!(in >> key >> set.k) || key != "k") fail("expected k");
  if (!(in >> key >> set.seed) || key != "seed") fail("expected seed");
  if (!(in >> key >> count) || key != "count") fail("expected count");
  if (!(in >> key >> d) || key != "d") fail("expected d");
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    ls >> key;
    if (key == "centroid") {
      Centroid c;
      ls >> c.label;
      c.latent.values.resize(d);
      for (double& v : c.latent.values) {
        if (!(ls >> v)) fail("truncated centroid");
      }
      set.centroids.push_back(std::move(c));
    } else if (key == "members") {
      if (set.centroids.empty()) fail("members before any centroid");
      int m = 0;
      while (ls >> m) set.centroids.back().members.push_back(m);
    } else {
      fail("unexpected line '" + line + "'");
    }
  }
  if (set.centroids.size() != count) fail("expected " + std::to_string(count) + " centroids");
  return set;
}

}  // namespace latnav
