#pragma once

#include <random>
#include <vector>

#include <Eigen/Core>

#include "oracles.hpp"
#include "pisa/assignment.hpp"

namespace fixture {

// A batch of `images` images with a few GTs each, proposals jittered around
// them plus some background, random logits and small random deltas.
inline pisa::SampleBatch random_batch(std::mt19937_64& rng, int images = 2, int classes = 3,
                                      int per_gt = 6, int background = 8) {
  std::normal_distribution<double> jit(0.0, 0.12);
  std::uniform_int_distribution<int> n_gt(1, 3), cls(0, classes - 1);
  std::normal_distribution<double> logit(0.0, 1.5), small(0.0, 0.05);
  std::vector<pisa::GroundTruth> gts;
  std::vector<pisa::BBox> props;
  std::vector<int> ids;
  for (int im = 0; im < images; ++im) {
    const int g = n_gt(rng);
    for (int k = 0; k < g; ++k) {
      const auto box = oracle::random_box(rng, 200.0, 20.0, 80.0);
      gts.push_back({box, cls(rng), im});
      for (int p = 0; p < per_gt; ++p) {
        const double w = box.width(), h = box.height();
        pisa::BBox q{box.x1 + jit(rng) * w, box.y1 + jit(rng) * h, box.x2 + jit(rng) * w,
                     box.y2 + jit(rng) * h};
        if (q.x2 - q.x1 < 2) q.x2 = q.x1 + 2;
        if (q.y2 - q.y1 < 2) q.y2 = q.y1 + 2;
        props.push_back(q);
        ids.push_back(im);
      }
    }
    for (int b = 0; b < background; ++b) {
      props.push_back(oracle::random_box(rng, 200.0, 10.0, 60.0));
      ids.push_back(im);
    }
  }
  auto batch = pisa::make_batch(props, ids, gts, classes);
  const auto n = static_cast<Eigen::Index>(batch.size());
  Eigen::MatrixXd z(n, classes + 1);
  for (Eigen::Index r = 0; r < n; ++r)
    for (Eigen::Index c = 0; c <= classes; ++c) z(r, c) = logit(rng);
  std::vector<pisa::Delta> d(batch.size());
  for (auto& x : d) x = {small(rng), small(rng), small(rng), small(rng)};
  batch.set_predictions(z, d);
  return batch;
}

}  // namespace fixture
