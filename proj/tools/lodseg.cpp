#include "lodseg/cli/dispatch.hpp"

int main(int argc, char** argv) { return lodseg::cli::dispatch(argc, argv); }
