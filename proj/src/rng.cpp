#include "evofcn/rng.hpp"

#include <sstream>

#include "evofcn/errors.hpp"

namespace evofcn {

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::set_state(const std::string& s) {
  std::istringstream is(s);
  std::mt19937_64 e;
  is >> e;
  if (is.fail()) throw ValidationError("malformed random engine state");
  engine_ = e;
}

}  // namespace evofcn
