#pragma once

// Byte-exact renderings of the reference examples.

#include <string>
#include <vector>

#include "retune/formats.hpp"

namespace retune::fixtures {

inline const std::string kAdditionReTuningRoot =
    "637 + 123\nSolution: Call: 37 + 23\nReturn: Carry 0, Output 60\nAnswer: Carry 0, Output 760";
inline const std::string kAdditionScratchpad =
    "637 + 123\nSolution: Carry 1, Output 0\nCarry 0, Output 60\nCarry 0, Output 760";
inline const std::string kAdditionBaseline = "637 + 123\nAnswer: 760";

inline const std::string kParityReTuningRoot =
    "What is the parity of [1, 0, 1]?\nSolution: Call: What is the parity of [0, 1]?\nReturn: 1\nAnswer: 0";
inline const std::string kParityBaseline = "What is the parity of [1, 0, 1]?\nAnswer: 0";
inline const std::string kParityScratchpad = "What is the parity of [1, 0, 1]?\nSolution: Compute one element at a time\n1 1 0";

// The root issues both of its calls itself.
inline const std::string kDpReTuningRoot =
    "Compute the maximum sum of nonadjacent subsequences of [1, -3, 2]\nSolution: Call: Create dp array [1, -3, 2]\n"
    "Return: [3, 2, 2]\nCall: Create chosen indices array: sum array [3, 2, 2], item array [1, -3, 2], can use item "
    "True\nReturn: [1, 2, 1]\nAnswer: [1, 2, 1]";

inline const std::string kDpIndicesContext =
    "Create chosen indices array: sum array [3, 2, 2], item array [1, -3, 2], can use item True\nSolution: If there is "
    "only 1 item, return 1 if we should use it else 2. If we should use the first item to get the sum, call False else "
    "True. Call: Create chosen indices array: sum array [2, 2], item array [-3, 2], can use item False\nReturn: [2, "
    "1]\nAnswer: Append 1 if False else 2.\nAnswer: [1, 2, 1]";

inline const std::string kDpScratchpad =
    "Question: Let's solve input = [1, -3, 2]. Scratchpad: dp[2] = max(input[2], 0) = max(2, 0) = 2\n"
    "dp[1] = max(input[1], input[2], 0) = max(-3, 2, 0) = 2\n"
    "dp[0] = max(dp[1], input[0] + dp[2], 0) = max(2, 1 + 2, 0) = 3\n\n"
    "Finally, we reconstruct the lexicographically smallest subsequence that fulfills the task objective by selecting "
    "numbers as follows. We store the result on a list named \"output\".\n\n"
    "Let can_use_next_item = True.\n"
    "Since dp[0] == input[0] + dp[2] (3 == 1 + 2) and can_use_next_item == True, we store output[0] = 1. We update "
    "can_use_next_item = False.\n"
    "Since dp[1] != input[1] (2 != -3) or can_use_next_item == False, we store output[1] = 2. We update "
    "can_use_next_item = True.\n"
    "Since dp[2] == input[2] (2 == 2) and can_use_next_item == True, we store output[2] = 1.\n\n"
    "Reconstructing all together, output=[1, 2, 1].";

inline const std::string kDpBaseline =
    "Given a sequence of integers, find a subsequence with the highest sum, such that no two numbers in the "
    "subsequence are adjacent in the original sequence.\n\nOutput a list with \"1\" for chosen numbers and \"2\" for "
    "unchosen ones. If multiple solutions exist, select the lexicographically smallest. Input = [1, -3, 2].\n"
    "Answer: [1, 2, 1]";

struct Case {
  std::string name;
  std::string actual;
  std::string expected;
};

inline std::vector<Case> cases() {
  const auto add = TaskInstance::addition("637", "123");
  const auto par = TaskInstance::parity({1, 0, 1});
  const auto dp = TaskInstance::dynprog({1, -3, 2});
  const auto dp_ctx = render_training(dp, Format::ReTuning);
  std::string indices;
  for (const auto& ex : dp_ctx)
    if (ex.text().rfind("Create chosen indices array: sum array [3, 2, 2]", 0) == 0) indices = ex.text();
  return {
      {"addition retuning root", render_training(add, Format::ReTuning).at(0).text(), kAdditionReTuningRoot},
      {"addition scratchpad", render_training(add, Format::Scratchpad).at(0).text(), kAdditionScratchpad},
      {"addition baseline", render_training(add, Format::Baseline).at(0).text(), kAdditionBaseline},
      {"parity retuning root", render_training(par, Format::ReTuning).at(0).text(), kParityReTuningRoot},
      {"parity baseline", render_training(par, Format::Baseline).at(0).text(), kParityBaseline},
      {"parity scratchpad", render_training(par, Format::Scratchpad).at(0).text(), kParityScratchpad},
      {"dynprog retuning root", dp_ctx.at(0).text(), kDpReTuningRoot},
      {"dynprog retuning indices", indices, kDpIndicesContext},
      {"dynprog scratchpad", render_training(dp, Format::Scratchpad).at(0).text(), kDpScratchpad},
      {"dynprog baseline", render_training(dp, Format::Baseline).at(0).text(), kDpBaseline},
  };
}

}  // namespace retune::fixtures
