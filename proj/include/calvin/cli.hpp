#pragma once

namespace calvin {

// Entry point for the `calvin` binary: subcommands gen-data, train, eval,
// ablate, render, gradcheck. Returns 0 on success, 1 on validation failure,
// 2 on usage errors.
int cli_main(int argc, char** argv);

}  // namespace calvin
