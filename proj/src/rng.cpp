#include "camo/rng.hpp"

#include <cmath>
#include <istream>
#include <ostream>

namespace camo {

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller on two fresh uniforms; u clamped away from 0 for the log.
  double u = uniform();
  double v = uniform();
  if (u < 0x1.0p-53) u = 0x1.0p-53;
  const double r = std::sqrt(-2.0 * std::log(u));
  const double a = 2.0 * M_PI * v;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

int Rng::uniform_int(int lo, int hi) {
  if (hi < lo) throw Error("rng", "uniform_int: inverted range");
  const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
  return lo + static_cast<int>(next_u64() % span);
}

void Rng::save(std::ostream& os) const {
  os << engine_ << '\n' << (has_spare_ ? 1 : 0) << ' ';
  os.precision(17);
  os << spare_ << '\n';
}

void Rng::load(std::istream& is) {
  int spare_flag = 0;
  is >> engine_ >> spare_flag >> spare_;
  has_spare_ = spare_flag != 0;
  if (!is) throw Error("rng", "failed to restore random state");
}

}  // namespace camo
