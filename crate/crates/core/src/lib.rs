//! Higher-order stack trees, compound rewrite operations given as DAGs,
//! ground stack-tree rewriting systems and operation automata.

pub mod dfa;
pub mod exec;
pub mod normalization;
pub mod stacks;
pub mod op_automaton;
pub mod op_dag;
pub mod rewriting;
pub mod stack_tree;
pub mod treegraph_encoding;

pub use stacks::{Alphabet, Stack, StackError, StackOp, Symbol, TestLanguage};
pub use stack_tree::{Position, StackTree, TreeError};
