// SPDX-License-Identifier: Apache-2.0
#include "msq/cli/commands.hpp"

int main(int argc, char** argv) { return msq::cli::run(argc, argv); }
