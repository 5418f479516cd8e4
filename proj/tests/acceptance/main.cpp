// SPDX-License-Identifier: Apache-2.0
//
// Runs the acceptance criteria and prints one PASS/FAIL line per criterion.
// Arguments select criteria by number (default: all).

#include <chrono>
#include <cstdio>
#include <exception>
#include <iostream>
#include <set>
#include <sstream>

#include "acceptance.hpp"

namespace misac::acceptance {

std::string fmt(double v, int precision) {
  std::ostringstream ss;
  ss.precision(precision);
  ss << v;
  return ss.str();
}

}  // namespace misac::acceptance

int main(int argc, char** argv) {
  using namespace misac::acceptance;
  struct Criterion {
    int id;
    const char* name;
    Outcome (*run)();
  };
  const Criterion all[] = {
      {1, "gradient integrity", gradient_integrity},
      {2, "oracle equivalence", oracle_equivalence},
      {3, "routing laws", routing_laws},
      {4, "masking laws", masking_laws},
      {5, "loss identities", loss_identities},
      {6, "tiny-overfit", tiny_overfit},
      {7, "directional claims", directional_claims},
      {8, "determinism and persistence", determinism_and_persistence},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

  bool ok = true;
  for (const auto& c : all) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out.pass = false;
      out.note(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (const auto& d : out.details) std::cout << "    " << d << "\n";
    std::cout << (out.pass ? "PASS" : "FAIL") << " " << c.id << " " << c.name << " (" << fmt(secs, 3) << " s)\n"
              << std::flush;
    ok = ok && out.pass;
  }
  return ok ? 0 : 1;
}
