#pragma once

namespace sid {

// Entry point behind the `sid` binary; also callable in-process from tests.
int cli_main(int argc, const char* const* argv);

}  // namespace sid
