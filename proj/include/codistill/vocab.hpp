#pragma once

// Token vocabulary: contiguous ids [0, size), one of which is eos, plus an
// optional set of named special tokens (e.g. answer markers that earn format
// reward).  Id `size` is reserved as the begin-of-sequence pad used only in
// context windows; it can never be emitted.

#include <map>
#include <string>

namespace codistill {

struct Vocab {
  int size = 0;
  int eos_token = 0;
  std::map<std::string, int> special_tokens;

  int begin_token() const { return size; }

  // Throws std::invalid_argument on malformed vocabularies.
  void validate() const;

  bool operator==(const Vocab&) const = default;
};

}  // namespace codistill
