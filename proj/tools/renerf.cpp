// SPDX-License-Identifier: Apache-2.0
#include "renerf/cli.hpp"

int main(int argc, char** argv) { return renerf::cli::main(argc, argv); }
