// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "pocketsim/core/random.hpp"
#include "pocketsim/sim/device.hpp"

namespace pocket::sim {

/// A group of synthetic learners with initial skills drawn uniformly from
/// [skill_min, skill_max].
struct CohortSpec {
  std::size_t children = 18;
  std::size_t games = 7;
  double skill_min = 0.0;
  double skill_max = 0.3;
  double learning_rate = 0.07;
  double base_sigma = 0.45;
  Millis reaction{400};
  std::optional<std::size_t> visual_attempts;
  /// Upper bound on each child's session.
  Millis duration{30 * 60 * 1000};
  rhythm::GameConfig game;

  void validate() const {
    if (children == 0) throw ConfigError("cohort needs at least one child");
    if (games == 0) throw ConfigError("cohort games must be positive");
    if (!(0.0 <= skill_min && skill_min <= skill_max && skill_max <= 1.0))
      throw ConfigError("cohort skill range must satisfy 0 <= min <= max <= 1");
    if (learning_rate < 0.0) throw ConfigError("learning_rate must be non-negative");
  }
};

inline Scenario child_scenario(const CohortSpec& spec, std::size_t index, double skill) {
  Scenario sc;
  sc.device_id = "child-" + std::to_string(index + 1);
  sc.session_label = "cohort-" + std::to_string(index + 1);
  sc.duration = spec.duration;
  sc.sample_period = spec.game.tick;
  sc.game = spec.game;
  LearnerSpec l;
  l.model.skill = skill;
  l.model.learning_rate = spec.learning_rate;
  l.model.base_sigma = spec.base_sigma;
  l.model.reaction = spec.reaction;
  l.visual_attempts = spec.visual_attempts;
  l.max_games = spec.games;
  sc.learner = l;
  return sc;
}

inline std::vector<SessionLog> run_cohort(const CohortSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng skills(derive_seed(seed, "cohort-skill"));
  std::vector<SessionLog> logs;
  logs.reserve(spec.children);
  for (std::size_t i = 0; i < spec.children; ++i) {
    const double skill = spec.skill_min + (spec.skill_max - spec.skill_min) * skills.uniform01();
    RunOptions opt;
    opt.keep_effects = false;
    logs.push_back(run_scenario(child_scenario(spec, i, skill), derive_seed(seed, "child-" + std::to_string(i)), opt));
  }
  return logs;
}

} // namespace pocket::sim
