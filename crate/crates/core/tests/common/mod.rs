pub mod refmodel;
