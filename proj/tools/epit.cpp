// SPDX-License-Identifier: Apache-2.0
#include "epit/cli.hpp"

int main(int argc, char** argv) { return epit::cli::dispatch(argc, argv); }
