#pragma once

// k-same aggregation of projected latents and same-class endpoint pairing.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "latnav/models.hpp"

namespace latnav {

struct ProjectedLatent {
  LatentPoint latent;
  int identity = -1;
  int label = -1;
};

struct Centroid {
  LatentPoint latent;
  int label = -1;
  std::vector<int> members;  // audit only, never exported for sharing
};

struct AnonymizedSet {
  std::vector<Centroid> centroids;
  std::size_t k = 2;
  std::uint64_t seed = 0;
};

// Within each class (ascending), members are grouped k at a time by greedy
// nearest-neighbour chaining in latent L2, starting from a seeded random
// member; the first member of each later group is the nearest remaining one
// to the last member placed. Each group becomes one centroid (its mean);
// fewer than k leftovers are dropped, so a class yields floor(N_c / k).
AnonymizedSet ksame_centroids(std::span<const ProjectedLatent> projected, std::size_t k, std::uint64_t seed);

struct EndpointPair {
  LatentPoint a;
  LatentPoint b;
  int label = -1;
  std::size_t first = 0;   // centroid indices
  std::size_t second = 0;
};

struct PairSampling {
  std::vector<EndpointPair> pairs;
  std::vector<int> skipped_classes;  // classes with a single centroid
};

// Random disjoint same-class pairs; an odd centroid out is dropped.
PairSampling sample_pairs(const AnonymizedSet& set, std::uint64_t seed);

// Text form:
//     latnav-centroids 1
//     k <k>
//     seed <n>
//     count <M>
//     d <d>
//     centroid <label> <d values>
//     members <ids...>          (audit form only, after its centroid)
void write_anonymized(std::ostream& out, const AnonymizedSet& set, bool include_members);
AnonymizedSet read_anonymized(std::istream& in);

}  // namespace latnav
