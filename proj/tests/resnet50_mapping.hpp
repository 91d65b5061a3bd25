#pragma once

// Multi-member dependency edges of ResNet-50, written out by hand in layer
// order. Used by the unit tests and the acceptance binary.

#include <set>
#include <string>
#include <utility>
#include <vector>

namespace testing {

using NameSet = std::set<std::string>;

inline std::vector<std::pair<NameSet, NameSet>> resnet50_multi_edges() {
  return {
      {{"c0"}, {"l1b1d", "l1b1c1"}},
      {{"l1b1d", "l1b1c3", "l1b2c3", "l1b3c3"}, {"l1b2c1", "l1b3c1", "l2b1d", "l2b1c1"}},
      {{"l2b1d", "l2b1c3", "l2b2c3", "l2b3c3", "l2b4c3"},
       {"l2b2c1", "l2b3c1", "l2b4c1", "l3b1d", "l3b1c1"}},
      {{"l3b1d", "l3b1c3", "l3b2c3", "l3b3c3", "l3b4c3", "l3b5c3", "l3b6c3"},
       {"l3b2c1", "l3b3c1", "l3b4c1", "l3b5c1", "l3b6c1", "l4b1d", "l4b1c1"}},
      {{"l4b1d", "l4b1c3", "l4b2c3", "l4b3c3"}, {"l4b2c1", "l4b3c1", "fc"}},
  };
}

}  // namespace testing
