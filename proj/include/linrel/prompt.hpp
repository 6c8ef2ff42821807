#pragma once

#include <string>
#include <vector>

namespace linrel {

enum class PromptMode {
  Fewshot,   // n-1 completed statements, then the target statement cut before its object
  Zeroshot,  // the target statement alone, cut before its object
  Nocontext, // bare "subject object" lines, target subject last with nothing after
};

/// A rendered prompt with the final subject mention located in token space.
struct Prompt {
  std::string text;
  std::vector<int> tokens;
  int subject_first = 0; // token index of the final subject mention
  int subject_last = 0;  // inclusive
  int icl_count = 0;     // completed in-context statements before the target
};

} // namespace linrel
