#pragma once

namespace nowcast {

/// Command-line entry point (synth / build / train / predict / evaluate /
/// mrmr / autocorr). Returns the process exit status; errors are reported as
/// a single line on stderr.
int run_cli(int argc, const char* const* argv);

}  // namespace nowcast
