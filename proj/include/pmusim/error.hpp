#pragma once

#include <stdexcept>
#include <string>

namespace pmusim {

// Error codes for everything the library can reject. Tests match on the
// code, messages are for humans.
enum class Errc {
  UnknownMnemonic,
  BadOperandCount,
  UndefinedLabel,
  BadOperand,
  UnhandledFault,
  Unstaged,
  DuplicateEvent,
  UnknownSignal,
  UnknownEvent,
  UnconfiguredSlot,
  EventUnavailable,
  FlatTrace,
  NoWorkingMethod,
  EmptyPayload,
  BadConfig,
};

const char* errc_name(Errc c);

class SimError : public std::runtime_error {
 public:
  SimError(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const { return code_; }

 private:
  Errc code_;
};

}  // namespace pmusim
