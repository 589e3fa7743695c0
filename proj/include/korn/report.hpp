#pragma once

#include <string>
#include <vector>

#include <korn/verification.hpp>

namespace korn {

/// Renders one bar per check showing how far its residual sits from the
/// threshold (green = margin, red = violation). Output bytes depend only on
/// the reports, so reruns of the same campaign produce the same file.
/// Returns false instead of throwing on any failure; callers treat the plot
/// as optional evidence and never let it change their exit status.
bool write_residual_svg(const std::vector<CheckReport>& reports,
                        const std::string& path);

}  // namespace korn
