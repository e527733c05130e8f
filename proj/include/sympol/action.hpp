#ifndef SYMPOL_ACTION_HPP
#define SYMPOL_ACTION_HPP

#include <utility>
#include <vector>

namespace sympol {

enum class ActionMode { continuous, discrete };

// A policy decision: either a discrete index or a continuous vector.
struct Action {
  ActionMode mode = ActionMode::continuous;
  int index = -1;                // discrete mode
  std::vector<double> values;    // continuous mode

  static Action discrete(int i) {
    Action a;
    a.mode = ActionMode::discrete;
    a.index = i;
    return a;
  }
  static Action continuous(std::vector<double> v) {
    Action a;
    a.mode = ActionMode::continuous;
    a.values = std::move(v);
    return a;
  }
};

}  // namespace sympol

#endif
