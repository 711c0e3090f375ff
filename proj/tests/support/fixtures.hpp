#pragma once

// Small trained generator and feature models shared by the slower unit tests.
// Built once per process, deterministically.

#include "tunalab/edits.hpp"
#include "tunalab/metrics.hpp"

namespace tunalab::testing {

inline const GeneratorBundle& small_generator() {
  static const GeneratorBundle bundle = [] {
    GeneratorHyper h;
    h.epochs = 8;
    h.samples = 5000;
    Rng rng(2024);
    return train_generator(WorldConfig{}, h, rng).bundle;
  }();
  return bundle;
}

inline const LabeledLatents& small_labeled() {
  static const LabeledLatents data = [] {
    Rng rng(77);
    return sample_labeled(small_generator(), 3000, rng);
  }();
  return data;
}

inline const ModelSet& small_models() {
  static const ModelSet set = [] {
    const auto& g = small_generator();
    const auto& d = small_labeled();
    ModelSet s;
    for (Space sp : {Space::kZ, Space::kW}) {
      s.add(fit_linear(sp, d.in(sp), d.labels, g.world));
      NonlinearFitConfig c;
      c.epochs = 30;
      s.add(fit_nonlinear(sp, d.in(sp), d.labels, g.world, c));
    }
    return s;
  }();
  return set;
}

}  // namespace tunalab::testing
